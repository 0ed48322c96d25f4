#pragma once

// File surface: OFF ingestion, PLY import/export, corpus and evaluation
// record persistence, the summary CSV and run manifests.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "pcadv/corpus.hpp"
#include "pcadv/eval.hpp"
#include "pcadv/geometry.hpp"

namespace pcadv::io {

// OFF mesh vertices as a raw (unnormalized, uncolored) cloud; faces are
// ignored. Accepts '#' comments, blank lines, and the ModelNet quirk of
// counts fused onto the header line ("OFF490 518 0"). Malformed or truncated
// input -> ParseError carrying the line number.
geom::PointCloud read_off(const std::filesystem::path& path);

// PLY, ascii or binary_little_endian. x/y/z must be float or double;
// optional red/green/blue uchar map to [0,1]. Other elements and properties
// (faces, normals, alpha) are skipped.
geom::PointCloud read_ply(const std::filesystem::path& path);

// Vertex-only PLY. Ascii writes doubles at 9 significant digits (round-trips
// within 1e-9); binary writes float coordinates. Colors, when present, are
// quantized to uchar.
void write_ply(const geom::PointCloud& cloud, const std::filesystem::path& path,
               bool binary = false);

// Imported-mesh pipeline entry: farthest-point-sample down to target_points
// (when larger), then center and scale to the unit sphere.
geom::PointCloud ingest_cloud(geom::PointCloud cloud, int target_points);

// Corpus directory layout: corpus.json (counts), captions.jsonl (one
// id/category/caption line per cloud, canonical order) and clouds/<id>.ply.
void write_corpus(const corpus::Corpus& corpus, const std::filesystem::path& dir);
corpus::Corpus read_corpus(const std::filesystem::path& dir);

// Evaluation records as JSONL, one record per line, append-friendly.
void write_records(std::span<const eval::EvalRecord> records, const std::filesystem::path& path);
std::vector<eval::EvalRecord> read_records(const std::filesystem::path& path);

// Summary CSV: attack,setting,asr,ags,csd,cd_x1e2,hd_x1e2,gamma.
// An unmeasurable gamma (NaN) prints as "--".
void write_summary_csv(std::span<const eval::Summary> rows, const std::filesystem::path& path);

// Per-run provenance: tool/version, subcommand, seed and the flattened
// configuration with its hash.
struct Manifest {
  std::string tool, version, subcommand;
  uint64_t seed = 0;
  std::map<std::string, std::string> config;
};

// FNV-1a over the sorted "key=value\n" lines.
uint64_t config_hash(const std::map<std::string, std::string>& config);

void write_manifest(const Manifest& manifest, const std::filesystem::path& path);
// Verifies the recorded config hash; mismatch -> ParseError.
Manifest read_manifest(const std::filesystem::path& path);

}  // namespace pcadv::io
