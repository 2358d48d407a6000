#include "moetts/store.hpp"

#include <cstring>
#include <fstream>
#include <vector>

#include "moetts/config.hpp"
#include "moetts/digest.hpp"
#include "nlohmann/json.hpp"

namespace moetts {

namespace {

constexpr char kMagic[] = "MOETTSCKPT1\n";
constexpr std::size_t kMagicLen = sizeof(kMagic) - 1;

const char* kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::Base: return "base";
    case ModelKind::DenseExtended: return "dense_extended";
    case ModelKind::Moe: return "moe";
  }
  return "?";
}

ModelKind kind_from_name(const std::string& s) {
  if (s == "base") return ModelKind::Base;
  if (s == "dense_extended") return ModelKind::DenseExtended;
  if (s == "moe") return ModelKind::Moe;
  throw IntegrityError("unknown model kind " + s);
}

const char* role_name(Role r) {
  switch (r) {
    case Role::Text: return "text";
    case Role::Speech: return "speech";
    case Role::Shared: return "shared";
  }
  return "?";
}

Role role_from_name(const std::string& s) {
  if (s == "text") return Role::Text;
  if (s == "speech") return Role::Speech;
  if (s == "shared") return Role::Shared;
  throw IntegrityError("unknown role " + s);
}

}  // namespace

CheckpointMeta save_checkpoint(const Model& m, const std::string& path, const std::string& phase,
                               std::uint64_t seed) {
  const auto tensors = m.tensors();
  std::uint64_t offset = 0;
  nlohmann::json params = nlohmann::json::array();
  std::string payload;
  for (const Tensor* t : tensors) {
    const std::uint64_t bytes = static_cast<std::uint64_t>(t->w.size()) * sizeof(double);
    params.push_back({{"name", t->name},
                      {"role", role_name(t->role)},
                      {"frozen", t->frozen},
                      {"rows", t->w.rows()},
                      {"cols", t->w.cols()},
                      {"dtype", "f64"},
                      {"offset", offset}});
    payload.append(reinterpret_cast<const char*>(t->w.data()), bytes);
    offset += bytes;
  }

  CheckpointMeta meta;
  meta.phase = phase;
  meta.seed = seed;
  meta.payload_digest = sha256_hex(payload);

  nlohmann::json manifest = {{"format_version", meta.format_version},
                             {"model_kind", kind_name(m.kind())},
                             {"config", model_config_to_json(m.config())},
                             {"phase", phase},
                             {"seed", seed},
                             {"payload_bytes", offset},
                             {"payload_digest", meta.payload_digest},
                             {"params", params}};
  const std::string mtext = manifest.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out.write(kMagic, static_cast<std::streamsize>(kMagicLen));
  const std::uint64_t mlen = mtext.size();
  out.write(reinterpret_cast<const char*>(&mlen), sizeof(mlen));
  out.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw IoError("short write to " + path);
  return meta;
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);

  char magic[kMagicLen];
  in.read(magic, static_cast<std::streamsize>(kMagicLen));
  if (!in || std::memcmp(magic, kMagic, kMagicLen) != 0) {
    throw IntegrityError("bad magic in " + path);
  }
  std::uint64_t mlen = 0;
  in.read(reinterpret_cast<char*>(&mlen), sizeof(mlen));
  if (!in) throw IntegrityError("truncated manifest length");
  std::string mtext(mlen, '\0');
  in.read(mtext.data(), static_cast<std::streamsize>(mlen));
  if (!in) throw IntegrityError("truncated manifest");
  nlohmann::json manifest = nlohmann::json::parse(mtext, nullptr, false);
  if (manifest.is_discarded()) throw IntegrityError("manifest is not valid JSON");

  const int version = manifest.at("format_version").get<int>();
  if (version != 1) throw IntegrityError("unsupported format version " + std::to_string(version));

  const std::uint64_t payload_bytes = manifest.at("payload_bytes").get<std::uint64_t>();
  std::string payload(payload_bytes, '\0');
  in.read(payload.data(), static_cast<std::streamsize>(payload_bytes));
  if (static_cast<std::uint64_t>(in.gcount()) != payload_bytes) {
    throw IntegrityError("payload shorter than manifest declares");
  }
  if (sha256_hex(payload) != manifest.at("payload_digest").get<std::string>()) {
    throw IntegrityError("payload digest mismatch");
  }

  LoadedCheckpoint out;
  out.meta.format_version = version;
  out.meta.phase = manifest.at("phase").get<std::string>();
  out.meta.seed = manifest.at("seed").get<std::uint64_t>();
  out.meta.payload_digest = manifest.at("payload_digest").get<std::string>();

  const ModelConfig cfg = model_config_from_json(manifest.at("config"));
  out.model = std::make_unique<Model>(kind_from_name(manifest.at("model_kind").get<std::string>()),
                                      cfg);

  std::uint64_t expect_offset = 0;
  std::size_t idx = 0;
  const auto& params = manifest.at("params");
  auto tensors = out.model->tensors();
  if (params.size() != tensors.size()) {
    throw IntegrityError("manifest parameter count does not match the architecture");
  }
  for (Tensor* t : tensors) {
    const auto& p = params.at(idx++);
    if (p.at("name").get<std::string>() != t->name) {
      throw IntegrityError("unexpected parameter order at " + t->name);
    }
    if (p.at("dtype").get<std::string>() != "f64") throw IntegrityError("unsupported dtype");
    const auto rows = p.at("rows").get<Eigen::Index>();
    const auto cols = p.at("cols").get<Eigen::Index>();
    if (rows != t->w.rows() || cols != t->w.cols()) {
      throw IntegrityError("shape mismatch for " + t->name);
    }
    const std::uint64_t offset = p.at("offset").get<std::uint64_t>();
    if (offset != expect_offset) throw IntegrityError("non-contiguous offset at " + t->name);
    const std::uint64_t bytes = static_cast<std::uint64_t>(t->w.size()) * sizeof(double);
    if (offset + bytes > payload_bytes) throw IntegrityError("payload overrun at " + t->name);
    std::memcpy(t->w.data(), payload.data() + offset, bytes);
    t->role = role_from_name(p.at("role").get<std::string>());
    t->frozen = p.at("frozen").get<bool>();
    expect_offset = offset + bytes;
  }
  if (expect_offset != payload_bytes) throw IntegrityError("payload length mismatch");
  return out;
}

}  // namespace moetts
