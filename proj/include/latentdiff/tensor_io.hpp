#pragma once

#include <filesystem>
#include <string>

#include "latentdiff/tensor.hpp"

namespace latentdiff {

// `.ltt` tensor files: one UTF-8 JSON header line
//   {"shape":[...],"dtype":"f32","order":"row-major"}\n
// followed by the raw little-endian f32 payload.

std::string encode_ltt(const LatentTensor& tensor);
LatentTensor decode_ltt(std::string_view bytes);

void write_ltt(const std::filesystem::path& path, const LatentTensor& tensor);
LatentTensor read_ltt(const std::filesystem::path& path);

/// Whole-file helpers shared by the writers in this project.
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace latentdiff
