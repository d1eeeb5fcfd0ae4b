#pragma once
// Minimal SHA-256 (FIPS 180-4) for artifact fingerprints in run manifests.

#include <cstddef>
#include <string>

namespace voxframe {

std::string sha256_hex(const void* data, std::size_t size);
std::string sha256_file(const std::string& path);  // throws on open failure

}  // namespace voxframe
