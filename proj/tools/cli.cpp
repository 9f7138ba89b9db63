#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "activemark/bytes.hpp"
#include "activemark/config.hpp"
#include "activemark/errors.hpp"
#include "activemark/images.hpp"
#include "activemark/io.hpp"
#include "activemark/perturbations.hpp"
#include "activemark/stats.hpp"
#include "activemark/toy_vfm.hpp"
#include "activemark/trainer.hpp"
#include "activemark/verify.hpp"

namespace activemark::cli {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

// Seed salts so each artifact family draws from its own stream.
constexpr std::uint64_t kProfileImages = 0x70726f66;
constexpr std::uint64_t kTriggerImages = 0x74726967;
constexpr std::uint64_t kModelInit = 0x6d6f646c;

/// Resolves each setting as flag > config file > built-in default and logs the choice.
class Settings {
 public:
  Settings(CLI::App& cmd, json config, std::ostream& log)
      : cmd_(cmd), config_(std::move(config)), section_(cmd.get_name()), log_(log) {}

  template <typename T>
  void resolve(T& value, const std::string& flag) {
    const std::string key = key_for(flag);
    if (cmd_.get_option(flag)->count() > 0) {
      note(key, json(value), "flag");
      return;
    }
    if (const json* v = find(key)) {
      try {
        value = v->get<T>();
      } catch (const json::exception& e) {
        throw ConfigError("config key '" + key + "': " + e.what());
      }
      note(key, *v, "config");
      return;
    }
    note(key, json(value), "default");
  }

  /// Seed: flag > config > ACTIVEMARK_SEED > 0.
  std::uint64_t seed(std::uint64_t flag_value) {
    if (cmd_.get_option("--seed")->count() > 0) {
      note("seed", json(flag_value), "flag");
      return flag_value;
    }
    if (const json* v = find("seed")) {
      try {
        const auto s = v->get<std::uint64_t>();
        note("seed", *v, "config");
        return s;
      } catch (const json::exception& e) {
        throw ConfigError(std::string("config key 'seed': ") + e.what());
      }
    }
    if (auto env = seed_from_env()) {
      note("seed", json(*env), "ACTIVEMARK_SEED");
      return *env;
    }
    note("seed", json(0), "default");
    return 0;
  }

 private:
  static std::string key_for(const std::string& flag) {
    std::string key = flag.substr(flag.find_first_not_of('-'));
    std::replace(key.begin(), key.end(), '-', '_');
    return key;
  }

  const json* find(const std::string& key) const {
    if (const json* v = config_lookup(config_, section_ + "." + key)) return v;
    if (const json* v = config_lookup(config_, key); v && !v->is_object()) return v;
    return nullptr;
  }

  void note(const std::string& key, const json& v, const char* source) {
    log_ << "activemark " << section_ << ": " << key << "=" << v.dump() << " (" << source << ")\n";
  }

  CLI::App& cmd_;
  json config_;
  std::string section_;
  std::ostream& log_;
};

struct Common {
  std::uint64_t seed = 0;
  std::string config;
  std::string out = ".";
};

void add_common(CLI::App& cmd, Common& c) {
  cmd.add_option("--seed", c.seed, "Base seed (falls back to config, then ACTIVEMARK_SEED)");
  cmd.add_option("--config", c.config, "TOML or JSON config file");
  cmd.add_option("--out", c.out, "Output directory")->capture_default_str();
}

fs::path prepare_out(const std::string& dir) {
  fs::path p(dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create output directory '" + dir + "': " + ec.message());
  return p;
}

std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(6);
  ss << v;
  return ss.str();
}

std::vector<std::string> with_step(std::vector<std::string> lineage, std::string step) {
  lineage.push_back(std::move(step));
  return lineage;
}

int verdict_code(Verdict v) {
  switch (v) {
    case Verdict::watermarked: return kOk;
    case Verdict::independent: return kIndependent;
    case Verdict::inconclusive: return kInconclusive;
  }
  return kInconclusive;
}

// ---------------------------------------------------------------- gen-model

struct GenModelArgs {
  Common common;
  std::size_t blocks = 6;
  std::size_t width = 32;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  std::size_t embed_dim = 32;
  std::size_t patch = 4;
  std::size_t image_size = 16;
  std::size_t channels = 1;
  long long split = -1;
  std::size_t profile_images = 100;
  std::size_t topk = 5;
  double ratio = 5.0;
};

void add_profile_flags(CLI::App& cmd, std::size_t& images, std::size_t& topk, double& ratio) {
  cmd.add_option("--profile-images", images, "Synthetic images used for the activation profile")->capture_default_str();
  cmd.add_option("--topk", topk, "k of the top-k activation statistic")->capture_default_str();
  cmd.add_option("--ratio", ratio, "Onset ratio for the expressive-block test")->capture_default_str();
}

ActivationProfile run_profile(ToyVfm& model, std::uint64_t seed, std::size_t count, std::size_t k) {
  const auto specs = synthetic_specs(count, derive_seed(seed, kProfileImages), model.config().image);
  const auto images = generate_images(specs);
  return profile_activations(model, images, k);
}

int cmd_gen_model(CLI::App& cmd, GenModelArgs& a, const json& config, std::ostream& out, std::ostream& err) {
  Settings s(cmd, config, err);
  const std::uint64_t seed = s.seed(a.common.seed);
  s.resolve(a.blocks, "--blocks");
  s.resolve(a.width, "--width");
  s.resolve(a.heads, "--heads");
  s.resolve(a.mlp_ratio, "--mlp-ratio");
  s.resolve(a.embed_dim, "--embed-dim");
  s.resolve(a.patch, "--patch");
  s.resolve(a.image_size, "--image-size");
  s.resolve(a.channels, "--channels");
  s.resolve(a.split, "--split");
  s.resolve(a.profile_images, "--profile-images");
  s.resolve(a.topk, "--topk");
  s.resolve(a.ratio, "--ratio");

  ArchConfig arch;
  arch.blocks = a.blocks;
  arch.width = a.width;
  arch.heads = a.heads;
  arch.mlp_ratio = a.mlp_ratio;
  arch.embed_dim = a.embed_dim;
  arch.patch = a.patch;
  arch.image = {a.channels, a.image_size, a.image_size};
  arch.split = 1;
  ToyVfm model(arch, derive_seed(seed, kModelInit));

  const fs::path dir = prepare_out(a.common.out);
  const auto profile = run_profile(model, seed, a.profile_images, a.topk);
  const auto pick = select_expressive_block(profile, a.ratio);
  std::size_t split = std::clamp<std::size_t>(pick.block, 1, a.blocks - 1);
  if (a.split >= 0) split = static_cast<std::size_t>(a.split);
  model.set_split(split);

  save_checkpoint(dir / "model.ckpt", model, {seed, {"gen-model"}});
  write_file_atomic(dir / "profile.csv", profile_csv(profile));
  out << "expressive_block=" << pick.block << " clear_onset=" << (pick.clear_onset ? "true" : "false")
      << " split=" << split << "\n";
  out << "wrote " << (dir / "model.ckpt").string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------- profile

struct ProfileArgs {
  Common common;
  std::string model;
  std::size_t profile_images = 100;
  std::size_t topk = 5;
  double ratio = 5.0;
};

int cmd_profile(CLI::App& cmd, ProfileArgs& a, const json& config, std::ostream& out, std::ostream& err) {
  Settings s(cmd, config, err);
  const std::uint64_t seed = s.seed(a.common.seed);
  s.resolve(a.model, "--model");
  s.resolve(a.profile_images, "--profile-images");
  s.resolve(a.topk, "--topk");
  s.resolve(a.ratio, "--ratio");
  auto ck = load_checkpoint(a.model);
  const fs::path dir = prepare_out(a.common.out);
  const auto profile = run_profile(ck.model, seed, a.profile_images, a.topk);
  const auto pick = select_expressive_block(profile, a.ratio);
  write_file_atomic(dir / "profile.csv", profile_csv(profile));
  for (std::size_t i = 0; i < profile.per_block.size(); ++i) {
    out << "block " << (i + 1) << " mean_topk=" << fmt(profile.per_block[i]) << "\n";
  }
  out << "expressive_block=" << pick.block << " clear_onset=" << (pick.clear_onset ? "true" : "false") << "\n";
  return kOk;
}

// ---------------------------------------------------------------- embed

struct EmbedArgs {
  Common common;
  std::string model;
  std::string trigger_dir;
  std::size_t steps = 500;
  double lambda = 1.0;
  std::size_t n = 8;
  std::size_t N = 32;
  std::size_t batch_size = 8;
  double lr = 1e-3;
  double encoder_lr_scale = 10.0;
  std::string optimizer = "adam";
  double weight_decay = 0.0;
  std::string scheduler = "cosine";
  long long split = -1;
  long long tau = -1;
  double eps = 1e-4;
};

std::vector<fs::path> list_raw_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("trigger directory '" + dir.string() + "' does not exist");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".amim") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

int cmd_embed(CLI::App& cmd, EmbedArgs& a, const json& config, std::ostream& out, std::ostream& err) {
  Settings s(cmd, config, err);
  const std::uint64_t seed = s.seed(a.common.seed);
  s.resolve(a.model, "--model");
  s.resolve(a.trigger_dir, "--trigger-dir");
  s.resolve(a.steps, "--steps");
  s.resolve(a.lambda, "--lambda");
  s.resolve(a.n, "--n");
  s.resolve(a.N, "--N");
  s.resolve(a.batch_size, "--batch-size");
  s.resolve(a.lr, "--lr");
  s.resolve(a.encoder_lr_scale, "--encoder-lr-scale");
  s.resolve(a.optimizer, "--optimizer");
  s.resolve(a.weight_decay, "--weight-decay");
  s.resolve(a.scheduler, "--scheduler");
  s.resolve(a.split, "--split");
  s.resolve(a.tau, "--tau");
  s.resolve(a.eps, "--eps");

  auto ck = load_checkpoint(a.model);
  TrainConfig cfg;
  cfg.lambda = a.lambda;
  cfg.steps = a.steps;
  cfg.batch_size = a.batch_size;
  cfg.learning_rate = a.lr;
  cfg.encoder_lr_scale = a.encoder_lr_scale;
  cfg.optimizer = parse_optimizer(a.optimizer);
  cfg.weight_decay = a.weight_decay;
  cfg.scheduler = parse_schedule(a.scheduler);
  cfg.seed = seed;
  cfg.n = a.n;
  cfg.epsilon = a.eps;
  if (a.split >= 0) cfg.split = static_cast<std::size_t>(a.split);
  if (a.tau >= 0) cfg.tau = static_cast<std::size_t>(a.tau);

  std::vector<Tensor> images;
  std::vector<TriggerRef> refs;
  if (!a.trigger_dir.empty()) {
    for (const auto& f : list_raw_images(a.trigger_dir)) {
      images.push_back(read_raw_image(f));
      TriggerRef r;
      r.source = TriggerRef::Source::file;
      r.path = f.string();
      r.digest = image_digest(images.back());
      refs.push_back(r);
    }
    if (images.empty()) throw IoError("no .amim images in '" + a.trigger_dir + "'");
    cfg.N = images.size();
  } else {
    cfg.N = a.N;
    const auto specs = synthetic_specs(cfg.N, derive_seed(seed, kTriggerImages), ck.model.config().image);
    images = generate_images(specs);
    refs = synthetic_refs(specs, images);
  }

  auto result = train_watermark(ck.model, cfg, images, std::move(refs));
  const fs::path dir = prepare_out(a.common.out);
  save_checkpoint(dir / "marked.ckpt", result.marked,
                  {ck.meta.seed, with_step(ck.meta.lineage, "embed seed=" + std::to_string(seed))});
  save_key(dir / "key.amk", result.key);
  write_file_atomic(dir / "history.csv", history_csv(result.history));

  auto probe = result.marked;
  const auto det = detection_rate(probe, result.key, images, 0);
  const auto& last = result.history.empty() ? HistoryRow{} : result.history.back();
  out << "trained steps=" << cfg.steps << " split=" << result.key.split << " n=" << cfg.n << " N=" << cfg.N
      << " tau=" << result.key.tau << "\n";
  out << "final loss=" << fmt(last.loss) << " bit_error=" << fmt(last.bit_error) << " R(tau=0)=" << det.rate << "/"
      << cfg.N << "\n";
  out << "wrote " << (dir / "marked.ckpt").string() << ", " << (dir / "key.amk").string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------- extract

struct ExtractArgs {
  Common common;
  std::string model;
  std::string key;
};

int cmd_extract(CLI::App& cmd, ExtractArgs& a, const json& config, std::ostream& out, std::ostream& err) {
  Settings s(cmd, config, err);
  s.seed(a.common.seed);
  s.resolve(a.model, "--model");
  s.resolve(a.key, "--key");
  auto ck = load_checkpoint(a.model);
  const auto key = load_key(a.key);
  const auto triggers = load_triggers(key, fs::path(a.key).parent_path());
  const auto ex = extract_all(ck.model, key, triggers);
  std::string csv = "image_id,embedded,extracted,distance\n";
  for (std::size_t i = 0; i < ex.extracted.size(); ++i) {
    csv += std::to_string(i) + "," + key.messages[i].to_string() + "," + ex.extracted[i].to_string() + "," +
           std::to_string(ex.distances[i]) + "\n";
  }
  const fs::path dir = prepare_out(a.common.out);
  write_file_atomic(dir / "extracted.csv", csv);
  out << "extracted " << ex.extracted.size() << " messages; exact matches " << detection_rate(ex.distances, 0)
      << "/" << key.N() << "\n";
  return kOk;
}

// ---------------------------------------------------------------- perturb

struct PerturbArgs {
  Common common;
  std::string model;
  std::string kind = "prune_l1";
  double fraction = 0.2;
  std::string task = "classification";
  std::size_t classes = 4;
  std::string scheduler = "constant";
  std::size_t epochs = 10;
  double lr = 1e-3;
  double weight_decay = 0.01;
  std::size_t train_per_class = 16;
  std::string name = "suspect";
  std::string manifest;
};

int cmd_perturb(CLI::App& cmd, PerturbArgs& a, const json& config, std::ostream& out, std::ostream& err) {
  Settings s(cmd, config, err);
  const std::uint64_t seed = s.seed(a.common.seed);
  s.resolve(a.model, "--model");
  s.resolve(a.kind, "--kind");
  s.resolve(a.fraction, "--fraction");
  s.resolve(a.task, "--task");
  s.resolve(a.classes, "--classes");
  s.resolve(a.scheduler, "--scheduler");
  s.resolve(a.epochs, "--epochs");
  s.resolve(a.lr, "--lr");
  s.resolve(a.weight_decay, "--weight-decay");
  s.resolve(a.train_per_class, "--train-per-class");
  s.resolve(a.name, "--name");
  s.resolve(a.manifest, "--manifest");

  if (a.kind == "prune") a.kind = "prune_l1";
  PerturbationSpec spec;
  spec.kind = parse_perturbation_kind(a.kind);
  spec.fraction = a.fraction;
  spec.task.kind = parse_task_kind(a.task);
  spec.task.classes = a.classes;
  spec.task.train_per_class = a.train_per_class;
  spec.task.seed = derive_seed(seed, 1);
  spec.finetune.scheduler = parse_schedule(a.scheduler);
  spec.finetune.epochs = a.epochs;
  spec.finetune.learning_rate = a.lr;
  spec.finetune.weight_decay = a.weight_decay;
  spec.finetune.seed = seed;
  spec.seed = derive_seed(seed, kModelInit);
  spec.applies_to = fs::path(a.model).stem().string();

  json params;
  std::string step;
  switch (spec.kind) {
    case PerturbationSpec::Kind::prune_l1:
      params = {{"fraction", a.fraction}};
      step = "prune_l1 fraction=" + fmt(a.fraction);
      break;
    case PerturbationSpec::Kind::finetune:
      params = {{"task", a.task}, {"classes", a.classes}, {"scheduler", a.scheduler}, {"epochs", a.epochs},
                {"lr", a.lr},     {"weight_decay", a.weight_decay}, {"seed", seed}};
      step = "finetune task=" + a.task + " scheduler=" + a.scheduler + " epochs=" + std::to_string(a.epochs) +
             " seed=" + std::to_string(seed);
      break;
    case PerturbationSpec::Kind::reinit:
      params = {{"seed", seed}};
      step = "reinit seed=" + std::to_string(seed);
      break;
    case PerturbationSpec::Kind::distill:
      params = json::object();
      break;
  }

  auto ck = load_checkpoint(a.model);
  ToyVfm suspect = apply_perturbation(ck.model, spec);
  CheckpointMeta meta = spec.kind == PerturbationSpec::Kind::reinit
                            ? CheckpointMeta{spec.seed, {step}}
                            : CheckpointMeta{ck.meta.seed, with_step(ck.meta.lineage, step)};

  const fs::path dir = prepare_out(a.common.out);
  const std::string file = a.name + ".ckpt";
  save_checkpoint(dir / file, suspect, meta);

  const fs::path manifest_path = a.manifest.empty() ? dir / "manifest.json" : fs::path(a.manifest);
  std::vector<ManifestEntry> entries;
  if (fs::exists(manifest_path)) entries = decode_manifest(read_file(manifest_path));
  ManifestEntry entry{a.name, std::string(to_string(spec.kind)), params,
                      fs::relative(fs::absolute(dir / file), fs::absolute(manifest_path).parent_path()).string()};
  auto it = std::find_if(entries.begin(), entries.end(), [&](const auto& e) { return e.id == a.name; });
  if (it != entries.end()) {
    *it = entry;
  } else {
    entries.push_back(entry);
  }
  write_file_atomic(manifest_path, encode_manifest(entries));
  out << "wrote " << (dir / file).string() << " (" << step << ")\n";
  return kOk;
}

// ---------------------------------------------------------------- verify

struct VerifyArgs {
  Common common;
  std::string model;
  std::string key;
  std::string id;
  std::string bounds;
  long long tau = -1;
  long long r_upper = -1;
  long long r_lower = -1;
  double alpha = 0.05;
  double eps = 1e-4;
};

int cmd_verify(CLI::App& cmd, VerifyArgs& a, const json& config, std::ostream& out, std::ostream& err) {
  Settings s(cmd, config, err);
  s.seed(a.common.seed);
  s.resolve(a.model, "--model");
  s.resolve(a.key, "--key");
  s.resolve(a.id, "--id");
  s.resolve(a.bounds, "--bounds");
  s.resolve(a.tau, "--tau");
  s.resolve(a.r_upper, "--r-upper");
  s.resolve(a.r_lower, "--r-lower");
  s.resolve(a.alpha, "--alpha");
  s.resolve(a.eps, "--eps");

  const auto key = load_key(a.key);
  const auto triggers = load_triggers(key, fs::path(a.key).parent_path());
  auto ck = load_checkpoint(a.model);

  std::optional<json> bounds;
  if (!a.bounds.empty()) bounds = load_json(a.bounds);

  DecisionPolicy policy = bounds ? policy_from_json(bounds->at("policy")) : default_policy(key.N(), key.tau);
  if (a.tau >= 0) policy.tau = static_cast<std::size_t>(a.tau);
  if (a.r_upper >= 0) policy.r_upper = static_cast<std::size_t>(a.r_upper);
  if (a.r_lower >= 0) policy.r_lower = static_cast<std::size_t>(a.r_lower);
  if (!bounds) {
    policy.alpha = a.alpha;
    policy.epsilon = a.eps;
  }

  const std::string id = a.id.empty() ? fs::path(a.model).stem().string() : a.id;
  auto report = verify_suspect(ck.model, key, triggers, policy, id);
  if (bounds) {
    report.p_omega = bounds->at("p_omega").get<double>();
    report.p_xi = bounds->at("p_xi").get<double>();
  }

  const fs::path dir = prepare_out(a.common.out);
  save_report(dir / "report.json", report);
  if (!report.incompatible) {
    write_file_atomic(dir / "distances.csv", distances_csv(report.distances, policy.tau));
    write_file_atomic(dir / "curve.csv", curve_csv(report.curve));
  }
  if (report.incompatible) {
    out << "verdict=independent (incompatible: " << report.incompatibility << ")\n";
    return kIncompatible;
  }
  out << "verdict=" << to_string(report.verdict) << " R=" << report.detection_rate << "/" << report.N
      << " tau=" << policy.tau << " r_lower=" << policy.r_lower << " r_upper=" << policy.r_upper << "\n";
  return verdict_code(report.verdict);
}

// ---------------------------------------------------------------- bounds

struct BoundsArgs {
  Common common;
  std::string key;
  std::string omega;
  std::string xi;
  std::size_t n = 32;
  std::size_t N = 1000;
  std::size_t models = 1000;
  double omega_rate = 0.99;
  double xi_rate = 0.5;
  long long tau = -1;
  double alpha = 0.05;
  double eps = 1e-4;
  long long r_upper = -1;
  long long r_lower = -1;
  bool calibrate = false;
  double target_xi = 1e-4;
  double target_omega = 1e-6;
};

std::vector<ToyVfm> load_population(const std::string& manifest) {
  const fs::path base = fs::path(manifest).parent_path();
  std::vector<ToyVfm> out;
  for (const auto& e : decode_manifest(read_file(manifest))) {
    fs::path p(e.checkpoint_path);
    out.push_back(load_checkpoint(p.is_absolute() ? p : base / p).model);
  }
  if (out.empty()) throw ArgumentError("manifest '" + manifest + "' lists no models");
  return out;
}

int cmd_bounds(CLI::App& cmd, BoundsArgs& a, const json& config, std::ostream& out, std::ostream& err) {
  Settings s(cmd, config, err);
  s.seed(a.common.seed);
  s.resolve(a.key, "--key");
  s.resolve(a.omega, "--omega");
  s.resolve(a.xi, "--xi");
  s.resolve(a.n, "--n");
  s.resolve(a.N, "--N");
  s.resolve(a.models, "--models");
  s.resolve(a.omega_rate, "--omega-rate");
  s.resolve(a.xi_rate, "--xi-rate");
  s.resolve(a.tau, "--tau");
  s.resolve(a.alpha, "--alpha");
  s.resolve(a.eps, "--eps");
  s.resolve(a.r_upper, "--r-upper");
  s.resolve(a.r_lower, "--r-lower");
  s.resolve(a.target_xi, "--target-xi");
  s.resolve(a.target_omega, "--target-omega");
  if (cmd.get_option("--calibrate")->count() == 0) {
    if (const json* v = config_lookup(config, "bounds.calibrate")) a.calibrate = v->get<bool>();
  }

  BitMatchEstimate omega, xi;
  std::size_t n = a.n;
  std::size_t tau = 0;
  json extra = json::object();
  if (!a.key.empty()) {
    if (a.omega.empty() || a.xi.empty()) throw ArgumentError("bounds with --key needs --omega and --xi manifests");
    const auto key = load_key(a.key);
    const auto triggers = load_triggers(key, fs::path(a.key).parent_path());
    auto omega_models = load_population(a.omega);
    auto xi_models = load_population(a.xi);
    n = key.n;
    tau = a.tau >= 0 ? static_cast<std::size_t>(a.tau) : key.tau;
    omega = estimate_bit_match(omega_models, key, triggers, a.alpha, Population::omega);
    xi = estimate_bit_match(xi_models, key, triggers, a.alpha, Population::xi);

    // Bit-position homogeneity of the independent population.
    std::vector<std::size_t> per_bit(n, 0);
    for (auto& m : xi_models) {
      const auto ex = extract_all(m, key, triggers);
      for (std::size_t i = 0; i < ex.extracted.size(); ++i) {
        for (std::size_t b = 0; b < n; ++b) per_bit[b] += ex.extracted[i][b] == key.messages[i][b];
      }
    }
    const auto chi = bit_homogeneity_test(per_bit, xi_models.size() * key.N());
    extra["bit_homogeneity"] = {{"statistic", chi.statistic}, {"dof", chi.dof}, {"p_value", chi.p_value}};

    const auto det_omega = detections_per_trigger(omega_models, key, triggers, tau);
    const auto det_xi = detections_per_trigger(xi_models, key, triggers, tau);
    extra["direct"] = {
        {"s_lower", direct_detection_bounds(det_omega, omega_models.size(), a.alpha, BoundSide::lower)},
        {"s_upper", direct_detection_bounds(det_xi, xi_models.size(), a.alpha, BoundSide::upper)}};
  } else {
    // Synthetic estimates: every trigger observed with the given match rates over M models.
    if (!(a.omega_rate >= 0.0 && a.omega_rate <= 1.0 && a.xi_rate >= 0.0 && a.xi_rate <= 1.0)) {
      throw ArgumentError("match rates must lie in [0, 1]");
    }
    if (a.tau >= 0) {
      tau = static_cast<std::size_t>(a.tau);
    } else {
      tau = select_threshold(n, 0.5, a.eps).value_or(0);
    }
    const std::size_t trials = a.models * n;
    const std::vector<std::size_t> om(a.N, static_cast<std::size_t>(std::llround(a.omega_rate * double(trials))));
    const std::vector<std::size_t> xm(a.N, static_cast<std::size_t>(std::llround(a.xi_rate * double(trials))));
    omega = bit_match_bounds(om, a.models, n, a.alpha, Population::omega);
    xi = bit_match_bounds(xm, a.models, n, a.alpha, Population::xi);
    extra["synthetic"] = {{"models", a.models}, {"omega_rate", a.omega_rate}, {"xi_rate", a.xi_rate}};
  }

  const std::size_t N = xi.triggers();
  DecisionPolicy policy;
  if (a.calibrate) {
    policy = calibrate_policy(xi, &omega, n, tau, a.eps, a.target_xi, a.target_omega);
  } else {
    policy = default_policy(N, tau);
    policy.alpha = a.alpha;
    policy.epsilon = a.eps;
  }
  if (a.r_upper >= 0) policy.r_upper = static_cast<std::size_t>(a.r_upper);
  if (a.r_lower >= 0) policy.r_lower = static_cast<std::size_t>(a.r_lower);
  const auto b = bound_detection_probabilities(omega, xi, policy, n);

  json j{{"n", n},
         {"N", N},
         {"policy", policy_to_json(policy)},
         {"p_omega", b.p_omega},
         {"p_xi", b.p_xi},
         {"confidence", b.confidence},
         {"s_lower", b.s_lower},
         {"s_upper", b.s_upper},
         {"l", omega.lower},
         {"u", xi.upper},
         {"models_omega", omega.models},
         {"models_xi", xi.models}};
  j.update(extra);
  const fs::path dir = prepare_out(a.common.out);
  save_json(dir / "bounds.json", j);
  out << "p_omega=" << b.p_omega << " p_xi=" << b.p_xi << " confidence=" << b.confidence << " tau=" << policy.tau
      << " r_lower=" << policy.r_lower << " r_upper=" << policy.r_upper << "\n";
  if (!std::isfinite(b.p_omega) || !std::isfinite(b.p_xi)) throw NumericError("bounds are not finite");
  return kOk;
}

// ---------------------------------------------------------------- threshold

struct ThresholdArgs {
  Common common;
  std::size_t n = 32;
  double r = 0.5;
  double eps = 1e-4;
};

int cmd_threshold(CLI::App& cmd, ThresholdArgs& a, const json& config, std::ostream& out, std::ostream& err) {
  Settings s(cmd, config, err);
  s.resolve(a.n, "--n");
  s.resolve(a.r, "--r");
  s.resolve(a.eps, "--eps");
  if (!(a.r >= 0.0 && a.r <= 1.0)) throw ArgumentError("--r must lie in [0, 1]");
  const auto tau = select_threshold(a.n, a.r, a.eps);
  if (tau) {
    out << "tau=" << *tau << "\n";
  } else {
    out << "tau=none\n";
  }
  return kOk;
}

// ---------------------------------------------------------------- report

struct ReportArgs {
  Common common;
  std::string report = "report.json";
};

int cmd_report(CLI::App& cmd, ReportArgs& a, const json& config, std::ostream& out, std::ostream& err) {
  Settings s(cmd, config, err);
  s.resolve(a.report, "--report");
  const auto r = load_report(a.report);
  out << "suspect: " << (r.suspect_id.empty() ? "(unnamed)" : r.suspect_id) << "\n";
  if (r.incompatible) {
    out << "verdict: independent (incompatible: " << r.incompatibility << ")\n";
    return kOk;
  }
  out << "verdict: " << to_string(r.verdict) << "\n";
  out << "detection rate: " << r.detection_rate << "/" << r.N << " at tau=" << r.policy.tau << "\n";
  out << "thresholds: r_lower=" << r.policy.r_lower << " r_upper=" << r.policy.r_upper << "\n";
  if (r.p_omega) out << "p_omega bound: " << *r.p_omega << "\n";
  if (r.p_xi) out << "p_xi bound: " << *r.p_xi << "\n";
  out << "rate by tau:";
  for (std::size_t t = 0; t < r.curve.size(); ++t) out << " " << t << ":" << fmt(r.curve[t]);
  out << "\n";
  return kOk;
}

int error_code(const std::exception& e) {
  if (dynamic_cast<const IncompatibleSuspect*>(&e)) return kIncompatible;
  if (dynamic_cast<const IoError*>(&e)) return kIoError;
  if (dynamic_cast<const ConfigError*>(&e)) return kBadConfig;
  if (dynamic_cast<const VersionError*>(&e)) return kVersion;
  if (dynamic_cast<const FormatError*>(&e)) return kIntegrity;
  if (dynamic_cast<const ArgumentError*>(&e)) return kUsage;
  if (dynamic_cast<const ShapeError*>(&e)) return kUsage;
  return kNumeric;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Watermark embedding and ownership verification for toy vision transformers", "activemark"};
  app.require_subcommand(1);

  GenModelArgs gen;
  auto* c_gen = app.add_subcommand("gen-model", "Initialise a model and pick its split from the activation profile");
  add_common(*c_gen, gen.common);
  c_gen->add_option("--blocks", gen.blocks, "Transformer blocks")->capture_default_str();
  c_gen->add_option("--width", gen.width, "Hidden width h")->capture_default_str();
  c_gen->add_option("--heads", gen.heads, "Attention heads")->capture_default_str();
  c_gen->add_option("--mlp-ratio", gen.mlp_ratio, "MLP expansion")->capture_default_str();
  c_gen->add_option("--embed-dim", gen.embed_dim, "Embedding width d")->capture_default_str();
  c_gen->add_option("--patch", gen.patch, "Patch size")->capture_default_str();
  c_gen->add_option("--image-size", gen.image_size, "Square image extent")->capture_default_str();
  c_gen->add_option("--channels", gen.channels, "Image channels")->capture_default_str();
  c_gen->add_option("--split", gen.split, "Split block (default: expressive block, clamped to [1, B-1])");
  add_profile_flags(*c_gen, gen.profile_images, gen.topk, gen.ratio);

  ProfileArgs prof;
  auto* c_prof = app.add_subcommand("profile", "Massive-activation profile of a checkpoint");
  add_common(*c_prof, prof.common);
  c_prof->add_option("--model", prof.model, "Checkpoint")->required();
  add_profile_flags(*c_prof, prof.profile_images, prof.topk, prof.ratio);

  EmbedArgs emb;
  auto* c_emb = app.add_subcommand("embed", "Train the watermark into a model and write the key");
  add_common(*c_emb, emb.common);
  c_emb->add_option("--model", emb.model, "Checkpoint to watermark")->required();
  c_emb->add_option("--trigger-dir", emb.trigger_dir, "Directory of .amim trigger images (default: synthetic)");
  c_emb->add_option("--steps", emb.steps, "Optimizer steps")->capture_default_str();
  c_emb->add_option("--lambda", emb.lambda, "Weight of the message term")->capture_default_str();
  c_emb->add_option("--n", emb.n, "Message length")->capture_default_str();
  c_emb->add_option("--N", emb.N, "Number of synthetic triggers")->capture_default_str();
  c_emb->add_option("--batch-size", emb.batch_size, "Triggers per step")->capture_default_str();
  c_emb->add_option("--lr", emb.lr, "Learning rate")->capture_default_str();
  c_emb->add_option("--encoder-lr-scale", emb.encoder_lr_scale, "Learning-rate multiplier for the encoder")
      ->capture_default_str();
  c_emb->add_option("--optimizer", emb.optimizer, "adam or adamw")->capture_default_str();
  c_emb->add_option("--weight-decay", emb.weight_decay, "AdamW weight decay")->capture_default_str();
  c_emb->add_option("--scheduler", emb.scheduler, "constant, cosine or linear")->capture_default_str();
  c_emb->add_option("--split", emb.split, "Override the checkpoint's split");
  c_emb->add_option("--tau", emb.tau, "Bit-error threshold stored in the key");
  c_emb->add_option("--eps", emb.eps, "False-acceptance budget used to pick tau")->capture_default_str();

  ExtractArgs ext;
  auto* c_ext = app.add_subcommand("extract", "Extract the messages a suspect produces on the key's triggers");
  add_common(*c_ext, ext.common);
  c_ext->add_option("--model", ext.model, "Suspect checkpoint")->required();
  c_ext->add_option("--key", ext.key, "Watermark key")->required();

  PerturbArgs per;
  auto* c_per = app.add_subcommand("perturb", "Derive a suspect model (prune, finetune, reinit)");
  add_common(*c_per, per.common);
  c_per->add_option("--model", per.model, "Source checkpoint")->required();
  c_per->add_option("--kind", per.kind, "prune_l1, finetune, reinit or distill")->capture_default_str();
  c_per->add_option("--fraction", per.fraction, "Pruning fraction")->capture_default_str();
  c_per->add_option("--task", per.task, "classification or dense")->capture_default_str();
  c_per->add_option("--classes", per.classes, "Classes of the downstream task")->capture_default_str();
  c_per->add_option("--scheduler", per.scheduler, "constant, cosine or linear")->capture_default_str();
  c_per->add_option("--epochs", per.epochs, "Fine-tuning epochs")->capture_default_str();
  c_per->add_option("--lr", per.lr, "Fine-tuning learning rate")->capture_default_str();
  c_per->add_option("--weight-decay", per.weight_decay, "AdamW weight decay")->capture_default_str();
  c_per->add_option("--train-per-class", per.train_per_class, "Training images per class")->capture_default_str();
  c_per->add_option("--name", per.name, "Suspect id and checkpoint stem")->capture_default_str();
  c_per->add_option("--manifest", per.manifest, "Manifest to update (default: <out>/manifest.json)");

  VerifyArgs ver;
  auto* c_ver = app.add_subcommand("verify", "Decide whether a suspect carries the watermark");
  add_common(*c_ver, ver.common);
  c_ver->add_option("--model", ver.model, "Suspect checkpoint")->required();
  c_ver->add_option("--key", ver.key, "Watermark key")->required();
  c_ver->add_option("--id", ver.id, "Suspect id for the report (default: checkpoint stem)");
  c_ver->add_option("--bounds", ver.bounds, "bounds.json whose policy and bounds to use");
  c_ver->add_option("--tau", ver.tau, "Bit-error threshold (default: the key's)");
  c_ver->add_option("--r-upper", ver.r_upper, "Watermarked at or above this count (default: ceil(0.75 N))");
  c_ver->add_option("--r-lower", ver.r_lower, "Independent at or below this count (default: floor(0.6 N))");
  c_ver->add_option("--alpha", ver.alpha, "Confidence parameter recorded in the policy")->capture_default_str();
  c_ver->add_option("--eps", ver.eps, "False-acceptance budget recorded in the policy")->capture_default_str();

  BoundsArgs bnd;
  auto* c_bnd = app.add_subcommand("bounds", "Probabilistic guarantees from suspect populations or synthetic rates");
  add_common(*c_bnd, bnd.common);
  c_bnd->add_option("--key", bnd.key, "Watermark key (population mode)");
  c_bnd->add_option("--omega", bnd.omega, "Manifest of functional copies");
  c_bnd->add_option("--xi", bnd.xi, "Manifest of independent models");
  c_bnd->add_option("--n", bnd.n, "Message length (synthetic mode)")->capture_default_str();
  c_bnd->add_option("--N", bnd.N, "Trigger count (synthetic mode)")->capture_default_str();
  c_bnd->add_option("--models", bnd.models, "Models per population (synthetic mode)")->capture_default_str();
  c_bnd->add_option("--omega-rate", bnd.omega_rate, "Bit-match rate of copies (synthetic mode)")->capture_default_str();
  c_bnd->add_option("--xi-rate", bnd.xi_rate, "Bit-match rate of independents (synthetic mode)")->capture_default_str();
  c_bnd->add_option("--tau", bnd.tau, "Bit-error threshold");
  c_bnd->add_option("--alpha", bnd.alpha, "Overall confidence parameter")->capture_default_str();
  c_bnd->add_option("--eps", bnd.eps, "False-acceptance budget")->capture_default_str();
  c_bnd->add_option("--r-upper", bnd.r_upper, "Watermarked threshold");
  c_bnd->add_option("--r-lower", bnd.r_lower, "Independent threshold");
  c_bnd->add_flag("--calibrate", bnd.calibrate, "Derive thresholds from the estimates");
  c_bnd->add_option("--target-xi", bnd.target_xi, "Calibration target for p_xi")->capture_default_str();
  c_bnd->add_option("--target-omega", bnd.target_omega, "Calibration target for p_omega")->capture_default_str();

  ThresholdArgs thr;
  auto* c_thr = app.add_subcommand("threshold", "Largest tau whose false-acceptance tail stays below eps");
  add_common(*c_thr, thr.common);
  c_thr->add_option("--n", thr.n, "Message length")->capture_default_str();
  c_thr->add_option("--r", thr.r, "Per-bit match probability of an unrelated decoder")->capture_default_str();
  c_thr->add_option("--eps", thr.eps, "False-acceptance budget")->capture_default_str();

  ReportArgs rep;
  auto* c_rep = app.add_subcommand("report", "Summarise a verification report");
  add_common(*c_rep, rep.common);
  c_rep->add_option("--report", rep.report, "report.json to read")->capture_default_str();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  struct Handler {
    CLI::App* cmd;
    Common* common;
    std::function<int(const json&)> run;
  };
  const std::vector<Handler> handlers{
      {c_gen, &gen.common, [&](const json& c) { return cmd_gen_model(*c_gen, gen, c, out, err); }},
      {c_prof, &prof.common, [&](const json& c) { return cmd_profile(*c_prof, prof, c, out, err); }},
      {c_emb, &emb.common, [&](const json& c) { return cmd_embed(*c_emb, emb, c, out, err); }},
      {c_ext, &ext.common, [&](const json& c) { return cmd_extract(*c_ext, ext, c, out, err); }},
      {c_per, &per.common, [&](const json& c) { return cmd_perturb(*c_per, per, c, out, err); }},
      {c_ver, &ver.common, [&](const json& c) { return cmd_verify(*c_ver, ver, c, out, err); }},
      {c_bnd, &bnd.common, [&](const json& c) { return cmd_bounds(*c_bnd, bnd, c, out, err); }},
      {c_thr, &thr.common, [&](const json& c) { return cmd_threshold(*c_thr, thr, c, out, err); }},
      {c_rep, &rep.common, [&](const json& c) { return cmd_report(*c_rep, rep, c, out, err); }},
  };

  for (const auto& h : handlers) {
    if (!app.got_subcommand(h.cmd)) continue;
    try {
      json config = json::object();
      if (!h.common->config.empty()) config = load_config(h.common->config);
      return h.run(config);
    } catch (const std::exception& e) {
      err << "activemark " << h.cmd->get_name() << ": error: " << e.what() << "\n";
      return error_code(e);
    }
  }
  return kUsage;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, out, err);
}

}  // namespace activemark::cli
