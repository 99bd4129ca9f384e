#include "rbfer/dataset_io.hpp"

#include <algorithm>
#include <cctype>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "rbfer/errors.hpp"

namespace rbfer {

namespace {

constexpr char kRbimMagic[6] = {'R', 'B', 'I', 'M', '1', '\0'};
constexpr char kRbamMagic[6] = {'R', 'B', 'A', 'M', '1', '\0'};

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

void put_f32(std::ostream& os, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(os, bits);
}

float get_f32(std::istream& is) {
  const std::uint32_t bits = get_u32(is);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

std::string strip(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

bool is_integer(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s) {
    if (!std::isdigit(static_cast<unsigned char>(c))) return false;
  }
  return true;
}

}  // namespace

DatasetManifest ingest_manifest(const std::string& csv_path,
                                const std::vector<std::string>& class_names) {
  std::ifstream in(csv_path);
  if (!in) throw DataError("cannot open manifest '" + csv_path + "'");

  std::string line;
  if (!std::getline(in, line)) throw DataError("empty manifest '" + csv_path + "'");
  if (strip(line) != "path,label") {
    throw DataError("manifest '" + csv_path + "' must start with header path,label");
  }

  DatasetManifest m;
  m.class_names = class_names;
  int max_label = -1;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    const std::string t = strip(line);
    if (t.empty()) continue;
    const std::size_t comma = t.rfind(',');
    if (comma == std::string::npos) {
      throw DataError("manifest row " + std::to_string(row) + " is not path,label");
    }
    const std::string path = strip(t.substr(0, comma));
    const std::string label_str = strip(t.substr(comma + 1));
    if (path.empty()) {
      throw DataError("manifest row " + std::to_string(row) + " has empty path");
    }
    int label;
    if (is_integer(label_str)) {
      label = std::stoi(label_str);
      if (!class_names.empty() &&
          label >= static_cast<int>(class_names.size())) {
        throw DataError("manifest row " + std::to_string(row) + ": label " +
                        label_str + " >= class count " +
                        std::to_string(class_names.size()));
      }
    } else {
      const auto it =
          std::find(class_names.begin(), class_names.end(), label_str);
      if (it == class_names.end()) {
        throw DataError("manifest row " + std::to_string(row) +
                        ": unknown label '" + label_str + "'");
      }
      label = static_cast<int>(it - class_names.begin());
    }
    max_label = std::max(max_label, label);
    m.records.push_back({path, label});
  }
  if (m.records.empty()) {
    throw DataError("manifest '" + csv_path + "' has no samples");
  }
  if (m.class_names.empty()) {
    for (int l = 0; l <= max_label; ++l) {
      m.class_names.push_back("class_" + std::to_string(l));
    }
  }
  m.split = "train";
  m.sort_records();
  m.validate();
  return m;
}

void write_manifest_csv(const DatasetManifest& manifest,
                        const std::string& path) {
  std::ofstream out(path, std::ios::binary);  // LF line endings everywhere
  if (!out) throw DataError("cannot write manifest '" + path + "'");
  out << "path,label\n";
  for (const auto& r : manifest.records) {
    out << r.path << ',' << r.label << '\n';
  }
  if (!out) throw DataError("error writing manifest '" + path + "'");
}

void write_rbim(const PixelStore& store, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write pixel store '" + path + "'");
  out.write(kRbimMagic, 6);
  put_u32(out, static_cast<std::uint32_t>(store.count()));
  put_u32(out, static_cast<std::uint32_t>(store.channels));
  put_u32(out, static_cast<std::uint32_t>(store.height));
  put_u32(out, static_cast<std::uint32_t>(store.width));
  out.write(reinterpret_cast<const char*>(store.pixels.data()),
            static_cast<std::streamsize>(store.pixels.size()));
  if (!out) throw DataError("error writing pixel store '" + path + "'");
}

PixelStore read_rbim(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open pixel store '" + path + "'");
  char magic[6];
  in.read(magic, 6);
  if (!in || std::memcmp(magic, kRbimMagic, 6) != 0) {
    throw DataError("'" + path + "' is not an RBIM1 pixel store");
  }
  const std::uint32_t n = get_u32(in);
  PixelStore store;
  store.channels = static_cast<int>(get_u32(in));
  store.height = static_cast<int>(get_u32(in));
  store.width = static_cast<int>(get_u32(in));
  const std::size_t total = static_cast<std::size_t>(n) * store.channels *
                            store.height * store.width;
  store.pixels.resize(total);
  in.read(reinterpret_cast<char*>(store.pixels.data()),
          static_cast<std::streamsize>(total));
  if (!in) throw DataError("truncated pixel store '" + path + "'");
  return store;
}

void write_pgm(const std::uint8_t* pixels, int height, int width,
               const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write image '" + path + "'");
  out << "P5\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels),
            static_cast<std::streamsize>(height) * width);
  if (!out) throw DataError("error writing image '" + path + "'");
}

void read_pgm(const std::string& path, std::vector<std::uint8_t>* pixels,
              int* height, int* width) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image '" + path + "'");
  std::string magic;
  in >> magic;
  if (magic != "P5") throw DataError("'" + path + "' is not a binary PGM");
  int w = 0, h = 0, maxval = 0;
  in >> w >> h >> maxval;
  if (!in || w < 1 || h < 1 || maxval != 255) {
    throw DataError("unsupported PGM header in '" + path + "'");
  }
  in.get();  // single whitespace after header
  pixels->resize(static_cast<std::size_t>(w) * h);
  in.read(reinterpret_cast<char*>(pixels->data()),
          static_cast<std::streamsize>(pixels->size()));
  if (!in) throw DataError("truncated PGM '" + path + "'");
  *height = h;
  *width = w;
}

Dataset load_dataset(const std::string& manifest_csv,
                     const std::string& images_path,
                     const std::vector<std::string>& class_names) {
  Dataset ds;
  ds.manifest = ingest_manifest(manifest_csv, class_names);

  const bool packed = images_path.size() >= 5 &&
                      images_path.substr(images_path.size() - 5) == ".rbim";
  if (packed) {
    const PixelStore store = read_rbim(images_path);
    const std::size_t per = static_cast<std::size_t>(store.channels) *
                            store.height * store.width;
    ds.images.channels = store.channels;
    ds.images.height = store.height;
    ds.images.width = store.width;
    ds.images.pixels.reserve(per * ds.manifest.records.size());
    for (const auto& r : ds.manifest.records) {
      if (r.path.rfind("pack:", 0) != 0) {
        throw DataError("record '" + r.path +
                        "' does not reference the packed pixel store");
      }
      const int idx = std::stoi(r.path.substr(5));
      if (idx < 0 || idx >= store.count()) {
        throw DataError("record '" + r.path + "' is out of range for '" +
                        images_path + "'");
      }
      const std::uint8_t* src = store.image(idx);
      ds.images.pixels.insert(ds.images.pixels.end(), src, src + per);
    }
  } else {
    const std::filesystem::path base =
        std::filesystem::path(manifest_csv).parent_path();
    int h = -1, w = -1;
    std::vector<std::uint8_t> img;
    for (const auto& r : ds.manifest.records) {
      int ih = 0, iw = 0;
      read_pgm((base / r.path).string(), &img, &ih, &iw);
      if (h < 0) {
        h = ih;
        w = iw;
        ds.images.channels = 1;
        ds.images.height = h;
        ds.images.width = w;
      } else if (ih != h || iw != w) {
        throw DataError("image '" + r.path + "' has mismatched dimensions");
      }
      ds.images.pixels.insert(ds.images.pixels.end(), img.begin(), img.end());
    }
  }
  return ds;
}

Tensor to_image_batch(const Dataset& dataset, const std::vector<int>& indices) {
  const int c = dataset.images.channels;
  const int h = dataset.images.height;
  const int w = dataset.images.width;
  Tensor batch({static_cast<int>(indices.size()), c, h, w});
  const std::size_t per = static_cast<std::size_t>(c) * h * w;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::uint8_t* src = dataset.images.image(indices[i]);
    double* dst = batch.data() + i * per;
    for (std::size_t p = 0; p < per; ++p) {
      dst[p] = static_cast<double>(src[p]) / 255.0;
    }
  }
  return batch;
}

void write_rbam(const Tensor& maps, const std::string& path) {
  if (maps.rank() != 4) throw DataError("attention dump requires a 4-D tensor");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write attention dump '" + path + "'");
  out.write(kRbamMagic, 6);
  for (int axis = 0; axis < 4; ++axis) {
    put_u32(out, static_cast<std::uint32_t>(maps.shape(axis)));
  }
  for (std::size_t i = 0; i < maps.size(); ++i) {
    put_f32(out, static_cast<float>(maps[i]));
  }
  if (!out) throw DataError("error writing attention dump '" + path + "'");
}

Tensor read_rbam(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open attention dump '" + path + "'");
  char magic[6];
  in.read(magic, 6);
  if (!in || std::memcmp(magic, kRbamMagic, 6) != 0) {
    throw DataError("'" + path + "' is not an RBAM1 attention dump");
  }
  int dims[4];
  for (int& d : dims) d = static_cast<int>(get_u32(in));
  Tensor maps({dims[0], dims[1], dims[2], dims[3]});
  for (std::size_t i = 0; i < maps.size(); ++i) {
    maps[i] = static_cast<double>(get_f32(in));
  }
  if (!in) throw DataError("truncated attention dump '" + path + "'");
  return maps;
}

}  // namespace rbfer
