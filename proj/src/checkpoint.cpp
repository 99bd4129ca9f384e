#include "rbfer/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "rbfer/errors.hpp"

namespace rbfer {

namespace {

constexpr char kMagic[6] = {'R', 'B', 'C', 'K', '1', '\0'};

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f64(std::ostream& os, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

double get_f64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

std::vector<Param> all_tensors(Model& model) {
  std::vector<Param> tensors = model.params();
  for (auto& b : model.buffers()) tensors.push_back(b);
  return tensors;
}

}  // namespace

void save_checkpoint(const std::string& path, Model& model,
                     const CheckpointMeta& meta) {
  nlohmann::json header;
  header["version"] = "RBCK1";
  header["backbone"] = {{"input_size", model.config().backbone.input_size},
                        {"in_channels", model.config().backbone.in_channels},
                        {"channels", model.config().backbone.channels}};
  header["num_classes"] = model.config().num_classes;
  header["class_names"] = meta.class_names;
  header["input_mean"] = meta.input_mean;
  header["input_std"] = meta.input_std;
  header["balance"] = {{"beta", meta.balance.beta},
                       {"raw", meta.balance.raw},
                       {"normalized", meta.balance.normalized}};
  header["seed"] = meta.seed;

  auto tensors = all_tensors(model);
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& t : tensors) {
    manifest.push_back({{"name", t.name}, {"shape", t.value->shape()}});
  }
  header["tensors"] = manifest;

  const std::string header_str = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint '" + path + "'");
  out.write(kMagic, 6);
  put_u32(out, static_cast<std::uint32_t>(header_str.size()));
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  for (const auto& t : tensors) {
    for (std::size_t i = 0; i < t.value->size(); ++i) put_f64(out, (*t.value)[i]);
  }
  if (!out) throw DataError("error writing checkpoint '" + path + "'");
}

std::unique_ptr<Model> load_checkpoint(const std::string& path,
                                       CheckpointMeta* meta) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path + "'");
  char magic[6];
  in.read(magic, 6);
  if (!in || std::memcmp(magic, kMagic, 6) != 0) {
    throw DataError("'" + path + "' is not an RBCK1 checkpoint");
  }
  const std::uint32_t header_len = get_u32(in);
  std::string header_str(header_len, '\0');
  in.read(header_str.data(), header_len);
  if (!in) throw DataError("truncated checkpoint header in '" + path + "'");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_str);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad checkpoint header in '" + path + "': " + e.what());
  }

  ModelConfig config;
  config.backbone.input_size = header["backbone"]["input_size"].get<int>();
  config.backbone.in_channels = header["backbone"]["in_channels"].get<int>();
  config.backbone.channels =
      header["backbone"]["channels"].get<std::vector<int>>();
  config.num_classes = header["num_classes"].get<int>();

  auto model = std::make_unique<Model>(config);
  auto tensors = all_tensors(*model);
  const auto& manifest = header["tensors"];
  if (manifest.size() != tensors.size()) {
    throw DataError("checkpoint tensor manifest does not match the model");
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (manifest[i]["name"].get<std::string>() != tensors[i].name ||
        manifest[i]["shape"].get<std::vector<int>>() != tensors[i].value->shape()) {
      throw DataError("checkpoint tensor '" +
                      manifest[i]["name"].get<std::string>() +
                      "' does not match the model layout");
    }
    for (std::size_t k = 0; k < tensors[i].value->size(); ++k) {
      (*tensors[i].value)[k] = get_f64(in);
    }
  }
  if (!in) throw DataError("truncated checkpoint '" + path + "'");

  if (meta) {
    meta->class_names = header["class_names"].get<std::vector<std::string>>();
    meta->input_mean = header["input_mean"].get<std::vector<double>>();
    meta->input_std = header["input_std"].get<std::vector<double>>();
    meta->balance.beta = header["balance"]["beta"].get<double>();
    meta->balance.raw = header["balance"]["raw"].get<std::vector<double>>();
    meta->balance.normalized =
        header["balance"]["normalized"].get<std::vector<double>>();
    meta->seed = header["seed"].get<std::uint64_t>();
  }
  return model;
}

}  // namespace rbfer
