#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>

namespace dataforge {

using Digest = std::array<std::uint8_t, 32>;

/// Incremental SHA-256.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(Sha256&&) noexcept;
  Sha256& operator=(Sha256&&) noexcept;
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  Sha256& update(std::span<const std::byte> bytes);
  Sha256& update(std::string_view text);
  Sha256& update_u64(std::uint64_t v);  // little-endian
  /// Length-prefixed (u64) string, for unambiguous framing of fields.
  Sha256& update_framed(std::string_view text);

  Digest finish();

  static Digest of(std::string_view text);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

std::string to_hex(std::span<const std::uint8_t> bytes);

/// SHA-256 content address: always 64 lowercase hex characters.
class Fingerprint {
 public:
  Fingerprint() = default;
  explicit Fingerprint(const Digest& digest);

  /// Throws Error(kInvalidArgument) unless text is 64 lowercase hex chars.
  static Fingerprint from_hex(std::string_view text);

  const std::string& hex() const noexcept { return hex_; }
  Digest digest() const;
  bool empty() const noexcept { return hex_.empty(); }

  friend bool operator==(const Fingerprint&, const Fingerprint&) = default;
  friend auto operator<=>(const Fingerprint&, const Fingerprint&) = default;

 private:
  std::string hex_;
};

}  // namespace dataforge
