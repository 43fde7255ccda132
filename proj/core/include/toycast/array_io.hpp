#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace toycast::io {

namespace fs = std::filesystem;

/// Writes a contiguous copy of `t` as raw little-endian float32 or float64
/// (chosen by the tensor dtype; other floating types are widened to float32).
/// Returns the dtype tag that was written ("f32" or "f64").
std::string write_raw(const fs::path& path, const torch::Tensor& t);

/// Reads a raw little-endian array of the given dtype tag and shape.
torch::Tensor read_raw(const fs::path& path, const std::string& dtype,
                       const std::vector<int64_t>& shape);

/// Appends a float32 block to an open binary file path (creates if missing).
void append_raw_f32(const fs::path& path, const torch::Tensor& t);

nlohmann::json read_json(const fs::path& path);
void write_json(const fs::path& path, const nlohmann::json& doc);

/// Named array set with a JSON index: the shared layout behind checkpoints.
/// Each array lands in `dir/<file>` and the returned index maps name ->
/// {file, dtype, shape}.
nlohmann::json write_named_arrays(const fs::path& dir, const std::string& prefix,
                                  const std::vector<std::pair<std::string, torch::Tensor>>& arrays);
std::vector<std::pair<std::string, torch::Tensor>> read_named_arrays(const fs::path& dir,
                                                                     const nlohmann::json& index);

std::vector<int64_t> shape_of(const torch::Tensor& t);

}  // namespace toycast::io
