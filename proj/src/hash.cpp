#include "dataforge/hash.hpp"

#include <openssl/evp.h>

#include "dataforge/error.hpp"

namespace dataforge {

struct Sha256::Impl {
  EVP_MD_CTX* ctx = nullptr;
  ~Impl() { EVP_MD_CTX_free(ctx); }
};

Sha256::Sha256() : impl_(std::make_unique<Impl>()) {
  impl_->ctx = EVP_MD_CTX_new();
  if (impl_->ctx == nullptr || EVP_DigestInit_ex(impl_->ctx, EVP_sha256(), nullptr) != 1) {
    fail(ErrorCode::kIoError, "sha256: cannot initialise digest context");
  }
}

Sha256::~Sha256() = default;
Sha256::Sha256(Sha256&&) noexcept = default;
Sha256& Sha256::operator=(Sha256&&) noexcept = default;

Sha256& Sha256::update(std::span<const std::byte> bytes) {
  if (!bytes.empty()) EVP_DigestUpdate(impl_->ctx, bytes.data(), bytes.size());
  return *this;
}

Sha256& Sha256::update(std::string_view text) {
  return update(std::as_bytes(std::span(text.data(), text.size())));
}

Sha256& Sha256::update_u64(std::uint64_t v) {
  std::array<std::uint8_t, 8> le{};
  for (int i = 0; i < 8; ++i) le[i] = static_cast<std::uint8_t>(v >> (8 * i));
  return update(std::as_bytes(std::span(le)));
}

Sha256& Sha256::update_framed(std::string_view text) {
  update_u64(text.size());
  return update(text);
}

Digest Sha256::finish() {
  Digest out{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(impl_->ctx, out.data(), &len);
  EVP_DigestInit_ex(impl_->ctx, EVP_sha256(), nullptr);
  return out;
}

Digest Sha256::of(std::string_view text) {
  Sha256 h;
  h.update(text);
  return h.finish();
}

std::string to_hex(std::span<const std::uint8_t> bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (auto b : bytes) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0xf]);
  }
  return out;
}

Fingerprint::Fingerprint(const Digest& digest) : hex_(to_hex(digest)) {}

Fingerprint Fingerprint::from_hex(std::string_view text) {
  if (text.size() != 64) fail(ErrorCode::kInvalidArgument, "fingerprint must be 64 hex chars");
  for (char c : text) {
    if (!((c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'))) {
      fail(ErrorCode::kInvalidArgument, "fingerprint must be lowercase hex");
    }
  }
  Fingerprint fp;
  fp.hex_ = std::string(text);
  return fp;
}

Digest Fingerprint::digest() const {
  Digest out{};
  auto nibble = [](char c) { return c <= '9' ? c - '0' : c - 'a' + 10; };
  for (size_t i = 0; i < out.size() && 2 * i + 1 < hex_.size(); ++i) {
    out[i] = static_cast<std::uint8_t>(nibble(hex_[2 * i]) << 4 | nibble(hex_[2 * i + 1]));
  }
  return out;
}

}  // namespace dataforge
