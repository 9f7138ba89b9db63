#include "activemark/io.hpp"

#include <cinttypes>
#include <cstdio>
#include <sstream>

#include "activemark/bytes.hpp"
#include "activemark/errors.hpp"
#include "activemark/images.hpp"

namespace activemark {

using nlohmann::json;

namespace {

constexpr std::string_view kCheckpointMagic = "AMCK";
constexpr std::string_view kKeyMagic = "AMKY";

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

std::uint64_t parse_hex64(const std::string& s) {
  if (s.empty() || s.size() > 16) throw FormatError("bad hex digest '" + s + "'");
  std::uint64_t v = 0;
  for (char c : s) {
    v <<= 4;
    if (c >= '0' && c <= '9') {
      v |= std::uint64_t(c - '0');
    } else if (c >= 'a' && c <= 'f') {
      v |= std::uint64_t(c - 'a' + 10);
    } else {
      throw FormatError("bad hex digest '" + s + "'");
    }
  }
  return v;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string_view to_string(ParamKind k) {
  switch (k) {
    case ParamKind::weight: return "weight";
    case ParamKind::bias: return "bias";
    case ParamKind::norm: return "norm";
    case ParamKind::embedding: return "embedding";
  }
  return "weight";
}

json arch_to_json(const ArchConfig& a) {
  return json{{"image", {{"channels", a.image.channels}, {"height", a.image.height}, {"width", a.image.width}}},
              {"patch", a.patch},
              {"width", a.width},
              {"heads", a.heads},
              {"mlp_ratio", a.mlp_ratio},
              {"blocks", a.blocks},
              {"embed_dim", a.embed_dim},
              {"split", a.split}};
}

ArchConfig arch_from_json(const json& j) {
  ArchConfig a;
  a.image.channels = j.at("image").at("channels").get<std::size_t>();
  a.image.height = j.at("image").at("height").get<std::size_t>();
  a.image.width = j.at("image").at("width").get<std::size_t>();
  a.patch = j.at("patch").get<std::size_t>();
  a.width = j.at("width").get<std::size_t>();
  a.heads = j.at("heads").get<std::size_t>();
  a.mlp_ratio = j.at("mlp_ratio").get<std::size_t>();
  a.blocks = j.at("blocks").get<std::size_t>();
  a.embed_dim = j.at("embed_dim").get<std::size_t>();
  a.split = j.at("split").get<std::size_t>();
  return a;
}

json param_manifest(const std::vector<const Parameter*>& params) {
  json out = json::array();
  for (const auto* p : params) {
    out.push_back({{"name", p->name}, {"kind", to_string(p->kind)}, {"shape", p->value.shape()}});
  }
  return out;
}

void check_manifest(const json& manifest, const std::vector<Parameter*>& params) {
  if (!manifest.is_array() || manifest.size() != params.size()) {
    throw FormatError("parameter manifest does not match the architecture (" + std::to_string(manifest.size()) +
                      " entries, architecture has " + std::to_string(params.size()) + ")");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = manifest[i];
    if (e.at("name").get<std::string>() != params[i]->name || e.at("shape").get<Shape>() != params[i]->value.shape()) {
      throw FormatError("parameter manifest entry " + std::to_string(i) + " ('" + e.at("name").get<std::string>() +
                        "') does not match the architecture");
    }
  }
}

std::string mask_string(const std::vector<bool>& mask) {
  std::string s;
  for (bool b : mask) s.push_back(b ? '1' : '0');
  return s;
}

/// Shared envelope: magic, version, header, payload, checksum.
struct Envelope {
  json header;
  std::string_view header_bytes;
  std::string_view payload;
  std::uint64_t checksum = 0;
};

std::string write_envelope(std::string_view magic, std::uint32_t version, const json& header, std::string_view payload,
                           bool checksum_header) {
  const std::string h = header.dump();
  ByteWriter w;
  w.raw(magic);
  w.u32(version);
  w.u64(h.size());
  w.raw(h);
  w.u64(payload.size());
  w.raw(payload);
  w.u64(checksum_header ? fnv1a(payload, fnv1a(h)) : fnv1a(payload));
  return w.take();
}

Envelope read_envelope(std::string_view bytes, std::string_view magic, std::uint32_t version, std::string_view what,
                       bool checksum_header) {
  ByteReader r(bytes);
  if (r.remaining() < magic.size() || r.raw(magic.size()) != magic) {
    throw FormatError("not a " + std::string(what) + " file (bad magic)");
  }
  const std::uint32_t found = r.u32();
  if (found != version) {
    throw VersionError(std::string(what) + " format version " + std::to_string(found) + " is not supported (expected " +
                       std::to_string(version) + ")");
  }
  Envelope env;
  const std::uint64_t hlen = r.u64();
  env.header_bytes = r.raw(hlen);
  try {
    env.header = json::parse(env.header_bytes);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string(what) + " header is not valid JSON: " + e.what());
  }
  try {
    const std::uint64_t plen = r.u64();
    env.payload = r.raw(plen);
    env.checksum = r.u64();
  } catch (const FormatError& e) {
    throw IntegrityError(std::string(what) + " payload is truncated: " + e.what());
  }
  if (r.remaining() != 0) throw IntegrityError(std::string(what) + " has trailing bytes");
  const std::uint64_t expect =
      checksum_header ? fnv1a(env.payload, fnv1a(env.header_bytes)) : fnv1a(env.payload);
  if (expect != env.checksum) {
    throw IntegrityError(std::string(what) + " checksum mismatch (stored " + hex64(env.checksum) + ", computed " +
                         hex64(expect) + ")");
  }
  return env;
}

void fill_params(std::vector<Parameter*> params, std::string_view payload, std::string_view what) {
  std::size_t total = 0;
  for (auto* p : params) total += p->value.size();
  if (payload.size() != total * 8) {
    throw FormatError(std::string(what) + " payload holds " + std::to_string(payload.size() / 8) +
                      " values, header implies " + std::to_string(total));
  }
  ByteReader r(payload);
  for (auto* p : params) {
    for (double& v : p->value.data()) v = r.f64();
    p->value.require_finite(what);
  }
}

template <typename Params>
void append_params(ByteWriter& w, const Params& params) {
  for (const auto* p : params) w.f64s(p->value.data());
}

json trigger_to_json(const TriggerRef& t) {
  json j{{"digest", hex64(t.digest)}};
  if (t.source == TriggerRef::Source::synthetic) {
    j["source"] = "synthetic";
    j["family"] = to_string(t.spec.family);
    j["seed"] = t.spec.seed;
    j["shape"] = t.spec.shape.as_shape();
  } else {
    j["source"] = "file";
    j["path"] = t.path;
  }
  return j;
}

TriggerRef trigger_from_json(const json& j) {
  TriggerRef t;
  t.digest = parse_hex64(j.at("digest").get<std::string>());
  const auto source = j.at("source").get<std::string>();
  if (source == "synthetic") {
    t.source = TriggerRef::Source::synthetic;
    t.spec.family = parse_image_family(j.at("family").get<std::string>());
    t.spec.seed = j.at("seed").get<std::uint64_t>();
    const auto shape = j.at("shape").get<Shape>();
    if (shape.size() != 3) throw FormatError("trigger shape must have three extents");
    t.spec.shape = {shape[0], shape[1], shape[2]};
  } else if (source == "file") {
    t.source = TriggerRef::Source::file;
    t.path = j.at("path").get<std::string>();
  } else {
    throw FormatError("unknown trigger source '" + source + "'");
  }
  return t;
}

template <typename F>
auto with_json_errors(std::string_view what, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw FormatError(std::string(what) + ": " + e.what());
  }
}

}  // namespace

// ---------------------------------------------------------------- checkpoints

std::string encode_checkpoint(const ToyVfm& model, const CheckpointMeta& meta) {
  const auto params = model.parameters();
  const std::string mask = mask_string(model.freeze_mask());
  json header{{"format_version", kCheckpointVersion},
              {"arch", arch_to_json(model.config())},
              {"seed", meta.seed},
              {"lineage", meta.lineage},
              {"parameters", param_manifest(params)},
              {"freeze_mask", mask},
              {"freeze_mask_digest", hex64(fnv1a(mask))}};
  ByteWriter payload;
  append_params(payload, params);
  return write_envelope(kCheckpointMagic, kCheckpointVersion, header, payload.bytes(), false);
}

LoadedCheckpoint decode_checkpoint(std::string_view bytes) {
  Envelope env = read_envelope(bytes, kCheckpointMagic, kCheckpointVersion, "checkpoint", false);
  return with_json_errors("checkpoint header", [&] {
    const json& h = env.header;
    ArchConfig arch = arch_from_json(h.at("arch"));
    try {
      arch.validate();
    } catch (const ArgumentError& e) {
      throw FormatError(std::string("checkpoint architecture is invalid: ") + e.what());
    }
    LoadedCheckpoint out{ToyVfm(arch, 0), {}};
    out.meta.seed = h.at("seed").get<std::uint64_t>();
    out.meta.lineage = h.at("lineage").get<std::vector<std::string>>();
    auto params = out.model.parameters();
    check_manifest(h.at("parameters"), params);
    fill_params(params, env.payload, "checkpoint");

    const auto mask = h.at("freeze_mask").get<std::string>();
    if (hex64(fnv1a(mask)) != h.at("freeze_mask_digest").get<std::string>()) {
      throw IntegrityError("checkpoint freeze mask digest mismatch");
    }
    if (mask.size() != params.size()) throw FormatError("checkpoint freeze mask length mismatch");
    std::vector<bool> m;
    for (char c : mask) m.push_back(c == '1');
    out.model.set_freeze_mask(m);
    return out;
  });
}

void save_checkpoint(const std::filesystem::path& path, const ToyVfm& model, const CheckpointMeta& meta) {
  write_file_atomic(path, encode_checkpoint(model, meta));
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

// ---------------------------------------------------------------- keys

std::string encode_key(const WatermarkKey& key) {
  key.validate();
  json triggers = json::array();
  for (const auto& t : key.triggers) triggers.push_back(trigger_to_json(t));
  json messages = json::array();
  for (const auto& m : key.messages) messages.push_back(m.to_string());
  json header{{"format_version", key.format_version},
              {"split", key.split},
              {"n", key.n},
              {"d", key.d},
              {"h", key.h},
              {"tau", key.tau},
              {"encoder_hidden", key.encoder.hidden_width()},
              {"decoder_hidden", key.decoder.hidden_width()},
              {"triggers", triggers},
              {"messages", messages}};
  ByteWriter payload;
  append_params(payload, key.encoder.parameters());
  append_params(payload, key.decoder.parameters());
  return write_envelope(kKeyMagic, WatermarkKey::kFormatVersion, header, payload.bytes(), true);
}

WatermarkKey decode_key(std::string_view bytes) {
  Envelope env = read_envelope(bytes, kKeyMagic, WatermarkKey::kFormatVersion, "key", true);
  return with_json_errors("key header", [&] {
    const json& h = env.header;
    WatermarkKey key;
    key.format_version = h.at("format_version").get<std::uint32_t>();
    key.split = h.at("split").get<std::size_t>();
    key.n = h.at("n").get<std::size_t>();
    key.d = h.at("d").get<std::size_t>();
    key.h = h.at("h").get<std::size_t>();
    key.tau = h.at("tau").get<std::size_t>();
    for (const auto& t : h.at("triggers")) key.triggers.push_back(trigger_from_json(t));
    for (const auto& m : h.at("messages")) key.messages.push_back(Message::parse(m.get<std::string>()));
    if (key.n == 0 || key.d == 0 || key.h == 0) throw FormatError("key widths must be positive");
    key.encoder = Encoder(key.h, key.n, 0, h.at("encoder_hidden").get<std::size_t>());
    key.decoder = Decoder(key.d, key.n, 0, h.at("decoder_hidden").get<std::size_t>());
    auto params = key.encoder.parameters();
    for (auto* p : key.decoder.parameters()) params.push_back(p);
    fill_params(params, env.payload, "key");
    key.validate();
    return key;
  });
}

void save_key(const std::filesystem::path& path, const WatermarkKey& key) { write_file_atomic(path, encode_key(key)); }

WatermarkKey load_key(const std::filesystem::path& path) { return decode_key(read_file(path)); }

std::vector<Tensor> load_triggers(const WatermarkKey& key, const std::filesystem::path& base_dir) {
  std::vector<Tensor> out;
  out.reserve(key.triggers.size());
  for (std::size_t i = 0; i < key.triggers.size(); ++i) {
    const auto& t = key.triggers[i];
    Tensor img;
    if (t.source == TriggerRef::Source::synthetic) {
      img = generate_image(t.spec);
    } else {
      if (t.path.empty()) throw FormatError("trigger " + std::to_string(i) + " has no image path");
      std::filesystem::path p(t.path);
      img = read_raw_image(p.is_absolute() ? p : base_dir / p);
    }
    if (image_digest(img) != t.digest) {
      throw IntegrityError("trigger " + std::to_string(i) + " does not match its recorded digest");
    }
    out.push_back(std::move(img));
  }
  return out;
}

// ---------------------------------------------------------------- reports

json policy_to_json(const DecisionPolicy& p) {
  return json{{"tau", p.tau}, {"epsilon", p.epsilon}, {"alpha", p.alpha}, {"r_lower", p.r_lower}, {"r_upper", p.r_upper}};
}

DecisionPolicy policy_from_json(const json& j) {
  return with_json_errors("policy", [&] {
    DecisionPolicy p;
    p.tau = j.at("tau").get<std::size_t>();
    p.epsilon = j.at("epsilon").get<double>();
    p.alpha = j.at("alpha").get<double>();
    p.r_lower = j.at("r_lower").get<std::size_t>();
    p.r_upper = j.at("r_upper").get<std::size_t>();
    return p;
  });
}

json report_to_json(const VerificationReport& r) {
  json j{{"format_version", r.format_version},
         {"suspect_id", r.suspect_id},
         {"incompatible", r.incompatible},
         {"incompatibility", r.incompatibility},
         {"n", r.n},
         {"N", r.N},
         {"distances", r.distances},
         {"detection_rate", r.detection_rate},
         {"verdict", to_string(r.verdict)},
         {"policy", policy_to_json(r.policy)},
         {"curve", r.curve}};
  j["p_omega"] = r.p_omega ? json(*r.p_omega) : json(nullptr);
  j["p_xi"] = r.p_xi ? json(*r.p_xi) : json(nullptr);
  j["gamma1"] = r.p_omega ? json(1.0 - *r.p_omega) : json(nullptr);
  j["gamma2"] = r.p_xi ? json(*r.p_xi) : json(nullptr);
  return j;
}

VerificationReport report_from_json(const json& j) {
  return with_json_errors("report", [&] {
    VerificationReport r;
    r.format_version = j.at("format_version").get<std::uint32_t>();
    if (r.format_version != VerificationReport::kFormatVersion) {
      throw VersionError("report format version " + std::to_string(r.format_version) + " is not supported");
    }
    r.suspect_id = j.at("suspect_id").get<std::string>();
    r.incompatible = j.at("incompatible").get<bool>();
    r.incompatibility = j.at("incompatibility").get<std::string>();
    r.n = j.at("n").get<std::size_t>();
    r.N = j.at("N").get<std::size_t>();
    r.distances = j.at("distances").get<std::vector<std::size_t>>();
    r.detection_rate = j.at("detection_rate").get<std::size_t>();
    r.verdict = parse_verdict(j.at("verdict").get<std::string>());
    r.policy = policy_from_json(j.at("policy"));
    r.curve = j.at("curve").get<std::vector<double>>();
    if (!j.at("p_omega").is_null()) r.p_omega = j.at("p_omega").get<double>();
    if (!j.at("p_xi").is_null()) r.p_xi = j.at("p_xi").get<double>();
    return r;
  });
}

void save_report(const std::filesystem::path& path, const VerificationReport& report) {
  save_json(path, report_to_json(report));
}

VerificationReport load_report(const std::filesystem::path& path) { return report_from_json(load_json(path)); }

// ---------------------------------------------------------------- CSV

std::string profile_csv(const ActivationProfile& profile) {
  std::string out = "block,mean_topk\n";
  for (std::size_t i = 0; i < profile.per_block.size(); ++i) {
    out += std::to_string(i + 1) + "," + fmt(profile.per_block[i]) + "\n";
  }
  return out;
}

std::string history_csv(std::span<const HistoryRow> history) {
  std::string out = "step,loss,fidelity,message_l1,bit_error\n";
  for (const auto& r : history) {
    out += std::to_string(r.step) + "," + fmt(r.loss) + "," + fmt(r.fidelity) + "," + fmt(r.message_l1) + "," +
           fmt(r.bit_error) + "\n";
  }
  return out;
}

std::string distances_csv(std::span<const std::size_t> distances, std::size_t tau) {
  std::string out = "image_id,distance,detected\n";
  for (std::size_t i = 0; i < distances.size(); ++i) {
    out += std::to_string(i) + "," + std::to_string(distances[i]) + "," + (distances[i] <= tau ? "1" : "0") + "\n";
  }
  return out;
}

std::string curve_csv(std::span<const double> curve) {
  std::string out = "tau,rate\n";
  for (std::size_t t = 0; t < curve.size(); ++t) out += std::to_string(t) + "," + fmt(curve[t]) + "\n";
  return out;
}

// ---------------------------------------------------------------- manifests

std::string encode_manifest(std::span<const ManifestEntry> entries) {
  json arr = json::array();
  for (const auto& e : entries) {
    arr.push_back({{"id", e.id}, {"kind", e.kind}, {"params", e.params}, {"checkpoint_path", e.checkpoint_path}});
  }
  return arr.dump(2) + "\n";
}

std::vector<ManifestEntry> decode_manifest(std::string_view text) {
  json arr;
  try {
    arr = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("manifest is not valid JSON: ") + e.what());
  }
  return with_json_errors("manifest", [&] {
    if (!arr.is_array()) throw FormatError("manifest must be a JSON array");
    std::vector<ManifestEntry> out;
    for (const auto& j : arr) {
      ManifestEntry e;
      e.id = j.at("id").get<std::string>();
      e.kind = j.at("kind").get<std::string>();
      e.params = j.value("params", json::object());
      e.checkpoint_path = j.at("checkpoint_path").get<std::string>();
      out.push_back(std::move(e));
    }
    return out;
  });
}

void save_json(const std::filesystem::path& path, const json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

json load_json(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

}  // namespace activemark
