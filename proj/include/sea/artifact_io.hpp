#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sea/attack.hpp"
#include "sea/tensor.hpp"
#include "sea/vlm.hpp"

namespace sea::io {

inline constexpr const char* kToolVersion = "sealab 0.1.0";

std::string read_file(const std::string& path);

/// Write-temp-then-rename; readers never observe partial files.
void atomic_write(const std::string& path, const std::string& bytes);

// Tensor binary: "SEAT" magic, u32 ndim, ndim x u32 dims, little-endian
// float32 data, row-major. Round-trips bit-exactly.
std::string tensor_to_bytes(const num::Tensor& t);
num::Tensor tensor_from_bytes(const std::string& bytes, size_t& offset);
void save_tensor(const std::string& path, const num::Tensor& t);
num::Tensor load_tensor(const std::string& path);

// Checkpoint: sequence of (u32 name length, name bytes, component-tag byte,
// embedded tensor binary) until end of file.
void save_checkpoint(const std::string& path, const vlm::ParameterStore& params);
vlm::ParameterStore load_checkpoint(const std::string& path);

/// 8-bit RGB PNG, value v -> round(v * 255). Lossy; there is deliberately
/// no PNG import, attack resumption goes through the tensor binary.
void export_png(const std::string& path, const num::Tensor& image);

/// Harmful strings: plain UTF-8, one per line. Pairs: JSONL objects with
/// "goal" and "target"; every target must begin with "Sure, here is".
attack::Corpora load_corpora(const std::string& harmful_path, const std::string& pairs_path);
void save_corpora(const std::string& harmful_path, const std::string& pairs_path,
                  const attack::Corpora& corpora);

/// Content digest (FNV-1a 64) over raw bytes, hex-encoded.
std::string digest_bytes(const std::string& bytes);
std::string digest_file(const std::string& path);

struct RunManifest {
    std::string run_id;
    std::string tool_version = kToolVersion;
    std::map<std::string, uint64_t> seeds;
    std::map<std::string, std::string> config;   // effective key=value snapshot
    std::vector<std::string> input_files;
    std::vector<std::string> output_files;
    std::string started_at;
    std::string finished_at;
};

/// Digests every listed file (missing file -> error) and writes the
/// manifest JSON. Call after all outputs are flushed; the manifest is the
/// last artifact of a run.
void write_manifest(const std::string& path, const RunManifest& m);

/// Recomputes digests recorded in the manifest. Returns the paths whose
/// content drifted (or disappeared); empty means clean.
std::vector<std::string> verify_manifest(const std::string& manifest_path);

std::string timestamp_utc();

}  // namespace sea::io
