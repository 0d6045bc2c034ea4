#ifndef HCB_DIGEST_HPP
#define HCB_DIGEST_HPP

#include <string>
#include <string_view>

namespace hcb {

/// SHA-256 of the given bytes, as a lowercase hex string.
std::string sha256_hex(std::string_view bytes);

}  // namespace hcb

#endif  // HCB_DIGEST_HPP
