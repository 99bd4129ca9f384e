#pragma once

#include <string>
#include <vector>

#include "rbfer/imbalance.hpp"
#include "rbfer/tensor.hpp"

namespace rbfer {

/// Reads a `path,label` CSV. Labels may be integers or names resolvable
/// against `class_names`; with an empty class list, integer labels define
/// L = max(label) + 1 and names are auto-generated.
DatasetManifest ingest_manifest(const std::string& csv_path,
                                const std::vector<std::string>& class_names = {});

void write_manifest_csv(const DatasetManifest& manifest,
                        const std::string& path);

/// Packed image container: magic "RBIM1\0", then N, channels, H, W as
/// little-endian u32, then u8 pixels row-major.
void write_rbim(const PixelStore& store, const std::string& path);
PixelStore read_rbim(const std::string& path);

/// 8-bit binary PGM (P5), the per-record image file format.
void write_pgm(const std::uint8_t* pixels, int height, int width,
               const std::string& path);
void read_pgm(const std::string& path, std::vector<std::uint8_t>* pixels,
              int* height, int* width);

/// Loads manifest plus pixels. When `images_path` ends in .rbim the records
/// must carry "pack:NNNNNN" ids into that store; otherwise each record path
/// is read as a PGM file relative to the manifest's directory.
Dataset load_dataset(const std::string& manifest_csv,
                     const std::string& images_path,
                     const std::vector<std::string>& class_names = {});

/// Converts stored 8-bit pixels of selected records to doubles in [0, 1],
/// shaped count x channels x H x W.
Tensor to_image_batch(const Dataset& dataset, const std::vector<int>& indices);

/// Attention dump: magic "RBAM1\0", then N, L, H, W as little-endian u32,
/// then N*L*H*W little-endian f32 in row-major (i,l,h,w) order.
void write_rbam(const Tensor& maps, const std::string& path);
Tensor read_rbam(const std::string& path);

}  // namespace rbfer
