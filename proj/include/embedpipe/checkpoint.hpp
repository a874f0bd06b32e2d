#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "embedpipe/models.hpp"
#include "embedpipe/params.hpp"
#include "json.hpp"

namespace embedpipe {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// On disk: one line of compact JSON (the header), then the arrays in header
/// order as little-endian float32. The header carries caller metadata under
/// "meta", the model description under "model", the array table and an
/// FNV-1a hash of the payload bytes.
struct Checkpoint {
  nlohmann::json meta;
  nlohmann::json model;
  ParameterStore arrays;
};

void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& model, const nlohmann::json& meta,
                     const ParameterStore& params);
/// With `verify`, a payload whose hash differs from the header is rejected.
Checkpoint load_checkpoint(const std::filesystem::path& path, bool verify = true);

nlohmann::json describe(const Encoder& e);
nlohmann::json describe(const Decoder& d);

void save_encoder(const std::filesystem::path& path, const Encoder& e, const nlohmann::json& meta);
void save_decoder(const std::filesystem::path& path, const Decoder& d, const nlohmann::json& meta);
Encoder encoder_from(const Checkpoint& ckpt);
Decoder decoder_from(const Checkpoint& ckpt);

/// Copies values from `src` into `dst`; names and shapes must match exactly.
void assign_parameters(ParameterStore& dst, const ParameterStore& src);

}  // namespace embedpipe
