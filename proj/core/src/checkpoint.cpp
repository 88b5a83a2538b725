#include "ciss/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "ciss/error.hpp"

namespace ciss {
namespace {

std::filesystem::path with_suffix(const std::filesystem::path& stem,
                                  const char* suffix) {
  std::filesystem::path p = stem;
  p += suffix;
  return p;
}

void put_le(std::string& out, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>(bits & 0xFF));
    bits >>= 8;
  }
}

double get_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) bits = (bits << 8) | p[i];
  return std::bit_cast<double>(bits);
}

}  // namespace

void save_checkpoint(const ModelState& model,
                     const std::filesystem::path& stem) {
  nlohmann::json manifest;
  manifest["format_version"] = kCheckpointFormatVersion;
  manifest["step"] = model.step;
  manifest["class_ids"] = model.bank.class_ids();
  std::vector<std::size_t> widths = {model.backbone.input_channels()};
  for (const ConvLayer& l : model.backbone.layers) {
    widths.push_back(l.kernel.dim(0));
  }
  manifest["backbone_channels"] = widths;

  std::string blob;
  nlohmann::json tensors = nlohmann::json::array();
  std::size_t offset = 0;
  for (const NamedTensor& p : model.parameters()) {
    tensors.push_back({{"name", p.name},
                       {"shape", p.tensor.shape()},
                       {"offset", offset},
                       {"count", p.tensor.size()}});
    for (double v : p.tensor.data()) put_le(blob, v);
    offset += p.tensor.size();
  }
  manifest["tensors"] = std::move(tensors);
  manifest["blob"] = with_suffix(stem, ".bin").filename().string();

  std::ofstream js(with_suffix(stem, ".json"));
  if (!js) throw IoError(fmt::format("cannot write {}.json", stem.string()));
  js << manifest.dump(2) << '\n';
  std::ofstream bin(with_suffix(stem, ".bin"), std::ios::binary);
  if (!bin) throw IoError(fmt::format("cannot write {}.bin", stem.string()));
  bin.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!js || !bin) {
    throw IoError(fmt::format("short write for checkpoint {}", stem.string()));
  }
}

ModelState load_checkpoint(const std::filesystem::path& stem) {
  std::ifstream js(with_suffix(stem, ".json"));
  if (!js) throw IoError(fmt::format("cannot read {}.json", stem.string()));
  nlohmann::json manifest;
  try {
    js >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(fmt::format("bad checkpoint manifest {}: {}",
                              stem.string(), e.what()));
  }
  if (manifest.value("format_version", -1) != kCheckpointFormatVersion) {
    throw IoError(fmt::format("{}: unsupported checkpoint format version",
                              stem.string()));
  }
  std::ifstream bin(with_suffix(stem, ".bin"), std::ios::binary);
  if (!bin) throw IoError(fmt::format("cannot read {}.bin", stem.string()));
  const std::vector<unsigned char> blob(std::istreambuf_iterator<char>(bin),
                                        {});

  // Rebuild the structure, then overwrite every tensor from the blob.
  const auto widths = manifest.at("backbone_channels").get<std::vector<std::size_t>>();
  const auto class_ids = manifest.at("class_ids").get<std::vector<int>>();
  Rng unused(0);
  ModelState model = make_initial_model(widths, class_ids, unused);
  model.step = manifest.at("step").get<int>();

  const auto& records = manifest.at("tensors");
  std::vector<NamedTensor> params = model.parameters();
  if (records.size() != params.size()) {
    throw IoError(fmt::format("{}: expected {} tensors, manifest lists {}",
                              stem.string(), params.size(), records.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& rec = records[i];
    Tensor t = params[i].tensor;
    const auto shape = rec.at("shape").get<Shape>();
    const auto offset = rec.at("offset").get<std::size_t>();
    const auto count = rec.at("count").get<std::size_t>();
    if (rec.at("name").get<std::string>() != params[i].name ||
        shape != t.shape() || count != t.size()) {
      throw IoError(fmt::format("{}: tensor record {} does not match model",
                                stem.string(), i));
    }
    if ((offset + count) * 8 > blob.size()) {
      throw IoError(fmt::format("{}: blob too short", stem.string()));
    }
    auto dst = t.mutable_data();
    for (std::size_t k = 0; k < count; ++k) {
      dst[k] = get_le(blob.data() + (offset + k) * 8);
    }
  }
  return model;
}

}  // namespace ciss
