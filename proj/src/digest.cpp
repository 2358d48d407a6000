#include "moetts/digest.hpp"

#include <openssl/evp.h>

#include <algorithm>

namespace moetts {

namespace {

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) { EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr); }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  void update(const void* data, std::size_t len) { EVP_DigestUpdate(ctx_, data, len); }
  std::string hex() {
    unsigned char out[EVP_MAX_MD_SIZE];
    unsigned int n = 0;
    EVP_DigestFinal_ex(ctx_, out, &n);
    static const char* kHex = "0123456789abcdef";
    std::string s;
    s.reserve(2 * n);
    for (unsigned int i = 0; i < n; ++i) {
      s.push_back(kHex[out[i] >> 4]);
      s.push_back(kHex[out[i] & 0xf]);
    }
    return s;
  }

 private:
  EVP_MD_CTX* ctx_;
};

}  // namespace

std::string sha256_hex(const void* data, std::size_t len) {
  Sha256 h;
  h.update(data, len);
  return h.hex();
}

std::string sha256_hex(const std::string& s) { return sha256_hex(s.data(), s.size()); }

std::string param_digest(const std::vector<const Tensor*>& selector) {
  if (selector.empty()) throw ContractError("param_digest: empty selector");
  std::vector<const Tensor*> sorted = selector;
  std::sort(sorted.begin(), sorted.end(),
            [](const Tensor* a, const Tensor* b) { return a->name < b->name; });
  Sha256 h;
  for (const Tensor* t : sorted) {
    h.update(t->name.data(), t->name.size());
    h.update(t->w.data(), static_cast<std::size_t>(t->w.size()) * sizeof(double));
  }
  return h.hex();
}

std::string param_digest(const std::vector<Tensor*>& selector) {
  std::vector<const Tensor*> c(selector.begin(), selector.end());
  return param_digest(c);
}

}  // namespace moetts
