#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace cpo {

std::string sha256_hex(std::span<const unsigned char> bytes);
std::string sha256_hex(std::string_view text);
std::string sha256_file(const std::filesystem::path& path);

/// The id git assigns to a blob with this content: SHA-1 of "blob <n>\0" + content.
std::string git_blob_sha1(std::string_view content);

}  // namespace cpo
