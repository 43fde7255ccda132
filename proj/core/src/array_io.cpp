#include "toycast/array_io.hpp"

#include <bit>
#include <fstream>

#include "toycast/error.hpp"

namespace toycast::io {

static_assert(std::endian::native == std::endian::little,
              "raw array files are little-endian; big-endian hosts need byte swapping");

std::vector<int64_t> shape_of(const torch::Tensor& t) {
  return std::vector<int64_t>(t.sizes().begin(), t.sizes().end());
}

std::string write_raw(const fs::path& path, const torch::Tensor& t) {
  auto cpu = t.detach().to(torch::kCPU);
  std::string tag = "f32";
  if (cpu.scalar_type() == torch::kFloat64) {
    tag = "f64";
  } else {
    cpu = cpu.to(torch::kFloat32);
  }
  cpu = cpu.contiguous();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw MissingArtifact("cannot open for writing: " + path.string());
  out.write(static_cast<const char*>(cpu.data_ptr()),
            static_cast<std::streamsize>(cpu.numel() * cpu.element_size()));
  if (!out) throw std::runtime_error("short write: " + path.string());
  return tag;
}

void append_raw_f32(const fs::path& path, const torch::Tensor& t) {
  auto cpu = t.detach().to(torch::kCPU, torch::kFloat32).contiguous();
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw MissingArtifact("cannot open for writing: " + path.string());
  out.write(static_cast<const char*>(cpu.data_ptr()),
            static_cast<std::streamsize>(cpu.numel() * sizeof(float)));
}

torch::Tensor read_raw(const fs::path& path, const std::string& dtype,
                       const std::vector<int64_t>& shape) {
  torch::ScalarType st;
  if (dtype == "f32") {
    st = torch::kFloat32;
  } else if (dtype == "f64") {
    st = torch::kFloat64;
  } else {
    throw FormatError("unknown array dtype '" + dtype + "' for " + path.string());
  }
  auto t = torch::empty(shape, torch::TensorOptions().dtype(st));
  const auto expected = static_cast<std::uintmax_t>(t.numel() * t.element_size());
  if (!fs::exists(path)) throw MissingArtifact("array file not found: " + path.string());
  if (fs::file_size(path) != expected) {
    throw FormatError("array file " + path.string() + " has " + std::to_string(fs::file_size(path)) +
                      " bytes, expected " + std::to_string(expected));
  }
  std::ifstream in(path, std::ios::binary);
  in.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(expected));
  if (!in) throw FormatError("short read: " + path.string());
  return t;
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact("file not found: " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("corrupt JSON in " + path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const nlohmann::json& doc) {
  const auto tmp = fs::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw MissingArtifact("cannot open for writing: " + tmp.string());
    out << doc.dump(2) << '\n';
  }
  fs::rename(tmp, path);
}

nlohmann::json write_named_arrays(const fs::path& dir, const std::string& prefix,
                                  const std::vector<std::pair<std::string, torch::Tensor>>& arrays) {
  fs::create_directories(dir);
  nlohmann::json index = nlohmann::json::array();
  for (std::size_t i = 0; i < arrays.size(); ++i) {
    const auto& [name, t] = arrays[i];
    const auto file = prefix + "_" + std::to_string(i) + ".bin";
    const auto dtype = write_raw(dir / file, t);
    index.push_back({{"name", name}, {"file", file}, {"dtype", dtype}, {"shape", shape_of(t)}});
  }
  return index;
}

std::vector<std::pair<std::string, torch::Tensor>> read_named_arrays(const fs::path& dir,
                                                                     const nlohmann::json& index) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  try {
    for (const auto& entry : index) {
      out.emplace_back(entry.at("name").get<std::string>(),
                       read_raw(dir / entry.at("file").get<std::string>(),
                                entry.at("dtype").get<std::string>(),
                                entry.at("shape").get<std::vector<int64_t>>()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("corrupt array index in " + dir.string() + ": " + e.what());
  }
  return out;
}

}  // namespace toycast::io
