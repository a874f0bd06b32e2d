#include "embedpipe/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>

#include "embedpipe/util.hpp"

namespace embedpipe {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void put_f32(std::string& out, double v) {
  const std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

double get_f32(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return static_cast<double>(std::bit_cast<float>(bits));
}

std::uint64_t payload_hash(const std::string& payload) {
  Fnv1a h;
  h.update(payload);
  return h.value();
}

}  // namespace

void save_checkpoint(const fs::path& path, const json& model, const json& meta, const ParameterStore& params) {
  std::string payload;
  payload.reserve(params.count() * 4);
  json arrays = json::array();
  for (const auto& e : params.entries()) {
    arrays.push_back({{"name", e.name}, {"shape", std::vector<std::size_t>(e.tensor.shape().begin(),
                                                                             e.tensor.shape().end())}});
    for (double v : e.tensor.data()) put_f32(payload, v);
  }
  json header = {{"format", "embedpipe-checkpoint/1"},
                 {"model", model},
                 {"meta", meta},
                 {"arrays", arrays},
                 {"payload_bytes", payload.size()},
                 {"payload_fnv1a", hex64(payload_hash(payload))}};
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out << header.dump() << '\n';
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw CheckpointError("short write on checkpoint " + path.string());
}

Checkpoint load_checkpoint(const fs::path& path, bool verify) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw CheckpointError(path.string() + ": missing header");
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    throw CheckpointError(path.string() + ": malformed header: " + e.what());
  }
  std::ostringstream rest;
  rest << in.rdbuf();
  const std::string payload = rest.str();
  try {
    if (header.at("format") != "embedpipe-checkpoint/1") throw CheckpointError(path.string() + ": unknown format");
    if (payload.size() != header.at("payload_bytes").get<std::size_t>()) {
      throw CheckpointError(path.string() + ": payload is " + std::to_string(payload.size()) + " bytes, header says " +
                            header.at("payload_bytes").dump());
    }
    if (verify && hex64(payload_hash(payload)) != header.at("payload_fnv1a").get<std::string>()) {
      throw CheckpointError(path.string() + ": payload hash mismatch");
    }
    Checkpoint ck;
    ck.meta = header.at("meta");
    ck.model = header.at("model");
    const auto* bytes = reinterpret_cast<const unsigned char*>(payload.data());
    std::size_t offset = 0;
    for (const json& a : header.at("arrays")) {
      std::vector<std::size_t> dims = a.at("shape").get<std::vector<std::size_t>>();
      Tensor& t = ck.arrays.add(a.at("name").get<std::string>(), Shape(std::span<const std::size_t>(dims)));
      if (offset + t.size() * 4 > payload.size()) throw CheckpointError(path.string() + ": truncated payload");
      for (double& v : t.data()) {
        v = get_f32(bytes + offset);
        offset += 4;
      }
    }
    if (offset != payload.size()) throw CheckpointError(path.string() + ": trailing payload bytes");
    return ck;
  } catch (const json::exception& e) {
    throw CheckpointError(path.string() + ": bad header field: " + e.what());
  } catch (const TensorError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

json describe(const Encoder& e) {
  return {{"kind", "encoder"},
          {"input", std::string(to_string(e.input_kind()))},
          {"input_dim", e.input_dim()},
          {"hidden", e.dims().hidden},
          {"dim", e.dims().embed},
          {"pooling", std::string(to_string(e.pooling()))}};
}

json describe(const Decoder& d) {
  return {{"kind", "decoder"}, {"vocab_size", d.vocab_size()}, {"hidden", d.dims().hidden}, {"dim", d.dims().embed}};
}

void save_encoder(const fs::path& path, const Encoder& e, const json& meta) {
  save_checkpoint(path, describe(e), meta, e.params());
}

void save_decoder(const fs::path& path, const Decoder& d, const json& meta) {
  save_checkpoint(path, describe(d), meta, d.params());
}

void assign_parameters(ParameterStore& dst, const ParameterStore& src) {
  if (dst.entries().size() != src.entries().size()) {
    throw CheckpointError("parameter count differs: expected " + std::to_string(dst.entries().size()) + " arrays, got " +
                          std::to_string(src.entries().size()));
  }
  for (std::size_t i = 0; i < dst.entries().size(); ++i) {
    auto& d = dst.entries()[i];
    const auto& s = src.entries()[i];
    if (d.name != s.name || !(d.tensor.shape() == s.tensor.shape())) {
      throw CheckpointError("array mismatch: expected " + d.name + d.tensor.shape().str() + ", got " + s.name +
                            s.tensor.shape().str());
    }
    std::copy(s.tensor.data().begin(), s.tensor.data().end(), d.tensor.data().begin());
  }
}

Encoder encoder_from(const Checkpoint& ck) {
  try {
    if (ck.model.at("kind") != "encoder") throw CheckpointError("checkpoint does not hold an encoder");
    ModelDims dims{ck.model.at("hidden").get<std::size_t>(), ck.model.at("dim").get<std::size_t>()};
    const auto input_dim = ck.model.at("input_dim").get<std::size_t>();
    Encoder e = ck.model.at("input") == "tokens"
                    ? Encoder::for_tokens(input_dim, dims, parse_pooling(ck.model.at("pooling").get<std::string>()), 0)
                    : Encoder::for_frames(input_dim, dims, 0);
    assign_parameters(e.params(), ck.arrays);
    return e;
  } catch (const json::exception& ex) {
    throw CheckpointError(std::string("encoder checkpoint: ") + ex.what());
  }
}

Decoder decoder_from(const Checkpoint& ck) {
  try {
    if (ck.model.at("kind") != "decoder") throw CheckpointError("checkpoint does not hold a decoder");
    ModelDims dims{ck.model.at("hidden").get<std::size_t>(), ck.model.at("dim").get<std::size_t>()};
    Decoder d = Decoder::create(ck.model.at("vocab_size").get<std::size_t>(), dims, 0);
    assign_parameters(d.params(), ck.arrays);
    return d;
  } catch (const json::exception& ex) {
    throw CheckpointError(std::string("decoder checkpoint: ") + ex.what());
  }
}

}  // namespace embedpipe
