#include "modalfuse/checkpoint.hpp"

#include <limits>

#include "binary_io.hpp"
#include "modalfuse/error.hpp"

namespace modalfuse {

namespace {

constexpr std::string_view kAuxPrefix = "aux.";

void write_tensor(detail::ByteWriter& w, const std::string& name, const Tensor& t) {
  if (name.size() > std::numeric_limits<std::uint16_t>::max()) {
    throw Error(ErrorKind::kInvalidArgument, "tensor name too long: " + name);
  }
  w.u16(static_cast<std::uint16_t>(name.size()));
  w.raw(name);
  w.u8(static_cast<std::uint8_t>(t.rank()));
  for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
  w.f32s(t.data());
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& ck) {
  ck.config.validate();
  detail::ByteWriter w;
  w.raw(std::string_view(kCheckpointMagic, 4));
  w.u32(kCheckpointVersion);
  const nlohmann::json header = {{"model", to_json(ck.config)}, {"meta", ck.meta}};
  const std::string text = header.dump();
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.raw(text);
  w.u32(static_cast<std::uint32_t>(ck.params.size() + ck.aux.size()));
  for (const auto& [name, t] : ck.params) write_tensor(w, name, t);
  for (const auto& [name, t] : ck.aux) write_tensor(w, std::string(kAuxPrefix) + name, t);
  return w.bytes();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  detail::ByteReader r(bytes, "checkpoint");
  if (r.remaining() < 4 || r.take(4) != std::string_view(kCheckpointMagic, 4)) {
    throw Error(ErrorKind::kBadMagic, "checkpoint: bad magic (expected \"AVCK\")");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw Error(ErrorKind::kVersionMismatch, "checkpoint: version " + std::to_string(version) +
                                                 ", expected " +
                                                 std::to_string(kCheckpointVersion));
  }
  const std::uint32_t json_len = r.u32();
  const std::string_view text = r.take(json_len);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kShapeInconsistency, std::string("checkpoint: config JSON: ") + e.what());
  }
  Checkpoint ck;
  try {
    ck.config = model_config_from_json(header.at("model"));
    if (header.contains("meta")) ck.meta = header.at("meta");
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kShapeInconsistency, std::string("checkpoint: config JSON: ") + e.what());
  } catch (const Error& e) {
    throw Error(ErrorKind::kShapeInconsistency, std::string("checkpoint: ") + e.what());
  }

  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t name_len = r.u16();
    std::string name(r.take(name_len));
    const std::uint8_t rank = r.u8();
    if (rank == 0) {
      throw Error(ErrorKind::kShapeInconsistency, "checkpoint: tensor " + name + " has rank 0");
    }
    Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    std::size_t numel = 1;
    for (std::size_t d : shape) {
      if (d == 0) {
        throw Error(ErrorKind::kShapeInconsistency,
                    "checkpoint: tensor " + name + " has a zero dimension");
      }
      numel *= d;
    }
    if (numel > r.remaining() / 4) {
      throw Error(ErrorKind::kTruncated, "checkpoint: truncated inside tensor " + name);
    }
    std::vector<double> data(numel);
    r.f32s(data);
    Tensor t(std::move(shape), std::move(data));
    if (name.starts_with(kAuxPrefix)) {
      ck.aux.emplace(name.substr(kAuxPrefix.size()), std::move(t));
    } else {
      if (ck.params.contains(name)) {
        throw Error(ErrorKind::kShapeInconsistency, "checkpoint: duplicate tensor " + name);
      }
      ck.params.insert(std::move(name), std::move(t));
    }
  }
  if (r.remaining() != 0) {
    throw Error(ErrorKind::kShapeInconsistency,
                "checkpoint: " + std::to_string(r.remaining()) + " trailing bytes");
  }

  const auto layout = parameter_layout(ck.config);
  if (layout.size() != ck.params.size()) {
    throw Error(ErrorKind::kShapeInconsistency,
                "checkpoint: " + std::to_string(ck.params.size()) + " parameters, config needs " +
                    std::to_string(layout.size()));
  }
  for (const auto& [name, shape] : layout) {
    if (!ck.params.contains(name)) {
      throw Error(ErrorKind::kShapeInconsistency, "checkpoint: missing parameter " + name);
    }
    if (ck.params.at(name).shape() != shape) {
      throw Error(ErrorKind::kShapeInconsistency,
                  "checkpoint: parameter " + name + " has shape " +
                      shape_to_string(ck.params.at(name).shape()) + ", config needs " +
                      shape_to_string(shape));
    }
  }
  return ck;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  detail::write_file(path, encode_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(detail::read_file(path));
}

}  // namespace modalfuse
