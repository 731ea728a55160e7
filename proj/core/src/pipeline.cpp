#include "ovrcine/pipeline.hpp"

#include "ovrcine/classical.hpp"
#include "ovrcine/composite.hpp"
#include "ovrcine/error.hpp"
#include "ovrcine/metrics.hpp"
#include "ovrcine/outer_volume.hpp"
#include "ovrcine/png_export.hpp"
#include "ovrcine/random.hpp"
#include "ovrcine/tensor_io.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace ovrcine {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Strict configuration parsing

namespace {

class Section
{
public:
  Section(json const &j, std::string path)
    : j_(j)
    , path_(std::move(path))
  {
    if (!j_.is_object()) { throw ConfigError(path_ + ": expected an object"); }
  }

  template <typename T>
  void get(char const *key, T &out)
  {
    seen_.insert(key);
    if (!j_.contains(key)) { return; }
    try {
      out = j_.at(key).get<T>();
    } catch (json::exception const &e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }

  json const *child(char const *key)
  {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const
  {
    for (auto const &[k, v] : j_.items()) {
      if (!seen_.count(k)) { throw ConfigError("unknown config key: " + path_ + "." + k); }
    }
  }

private:
  json const &j_;
  std::string path_;
  std::set<std::string> seen_;
};

void require_choice(std::string const &v, std::initializer_list<char const *> options, char const *what)
{
  for (auto const *o : options) {
    if (v == o) { return; }
  }
  throw ConfigError(std::string("invalid value for ") + what + ": " + v);
}

} // namespace

PipelineConfig PipelineConfig::from_json(json const &j)
{
  PipelineConfig c;
  Section top(j, "config");
  top.get("seed", c.seed);
  top.get("workspace", c.workspace);

  if (auto const *s = top.child("phantom")) {
    Section p(*s, "phantom");
    auto &ph = c.phantom.phantom;
    p.get("n_pe", ph.n_pe);
    p.get("n_fe", ph.n_fe);
    p.get("frames", ph.T);
    p.get("heart_row", ph.heart_row);
    p.get("heart_col", ph.heart_col);
    p.get("r0", ph.r0);
    p.get("contraction", ph.contraction);
    p.get("period", ph.period);
    p.get("rim_intensity", ph.rim_intensity);
    p.get("drift_amplitude", ph.drift_amplitude);
    p.get("frame_period", ph.frame_period);
    p.get("coils", c.phantom.coils);
    p.get("snr_db", c.phantom.snr_db);
    p.finish();
  }
  if (auto const *s = top.child("schedule")) {
    Section p(*s, "schedule");
    p.get("R_acq", c.schedule.R_acq);
    p.get("R", c.schedule.R);
    p.get("with_center", c.schedule.with_center);
    p.get("offset0", c.schedule.offset0);
    p.finish();
  }
  if (auto const *s = top.child("ghost_net")) {
    Section p(*s, "ghost_net");
    p.get("width", c.ghost_net.net.net.width);
    p.get("blocks", c.ghost_net.net.net.blocks);
    p.get("block_scale", c.ghost_net.net.net.block_scale);
    p.get("steps", c.ghost_net.net.steps);
    p.get("lr", c.ghost_net.net.lr);
    p.get("labels", c.ghost_net.labels);
    p.get("train_frames", c.ghost_net.train_frames);
    p.finish();
  }
  if (auto const *s = top.child("ovr")) {
    Section p(*s, "ovr");
    p.get("roi", c.ovr.roi);
    p.get("threshold", c.ovr.threshold);
    p.get("margin", c.ovr.margin);
    p.get("background", c.ovr.background);
    p.get("refresh", c.ovr.refresh);
    p.finish();
  }
  if (auto const *s = top.child("pddl")) {
    Section p(*s, "pddl");
    auto &u = c.pddl.unroll;
    auto &t = c.pddl.train;
    p.get("n_unrolls", u.n_unrolls);
    p.get("n_cg", u.n_cg);
    p.get("mu_init", u.mu_init);
    p.get("width", u.prox.width);
    p.get("blocks", u.prox.blocks);
    p.get("block_scale", u.prox.block_scale);
    p.get("K", t.K);
    p.get("rho", t.rho);
    p.get("lr", t.lr);
    p.get("steps", t.steps);
    p.get("lambda", t.lambda);
    std::string region = "roi";
    p.get("consistency_region", region);
    require_choice(region, {"roi", "outer"}, "pddl.consistency_region");
    t.region = region == "roi" ? ConsistencyRegion::Roi : ConsistencyRegion::Outer;
    p.finish();
  }
  if (auto const *s = top.child("eval")) {
    Section p(*s, "eval");
    p.get("cg_iters", c.eval.cg.max_iters);
    p.get("cg_tol", c.eval.cg.rel_tol);
    p.get("cg_mu", c.eval.cg.mu);
    p.get("panel_frames", c.eval.panel_frames);
    p.get("systolic_frames", c.eval.systolic_frames);
    p.get("corruption", c.eval.corruption);
    p.finish();
  }
  top.finish();
  validate(c);
  return c;
}

json PipelineConfig::section(std::string const &name) const
{
  if (name == "seed") { return seed; }
  if (name == "phantom") {
    auto const &ph = phantom.phantom;
    return {{"n_pe", ph.n_pe},
            {"n_fe", ph.n_fe},
            {"frames", ph.T},
            {"heart_row", ph.heart_row},
            {"heart_col", ph.heart_col},
            {"r0", ph.r0},
            {"contraction", ph.contraction},
            {"period", ph.period},
            {"rim_intensity", ph.rim_intensity},
            {"drift_amplitude", ph.drift_amplitude},
            {"frame_period", ph.frame_period},
            {"coils", phantom.coils},
            {"snr_db", phantom.snr_db}};
  }
  if (name == "schedule") {
    return {{"R_acq", schedule.R_acq},
            {"R", schedule.R},
            {"with_center", schedule.with_center},
            {"offset0", schedule.offset0}};
  }
  if (name == "ghost_net") {
    auto const &n = ghost_net.net;
    return {{"width", n.net.width},     {"blocks", n.net.blocks}, {"block_scale", n.net.block_scale},
            {"steps", n.steps},         {"lr", n.lr},             {"labels", ghost_net.labels},
            {"train_frames", ghost_net.train_frames}};
  }
  if (name == "ovr") {
    return {{"roi", ovr.roi},
            {"threshold", ovr.threshold},
            {"margin", ovr.margin},
            {"background", ovr.background},
            {"refresh", ovr.refresh}};
  }
  if (name == "pddl") {
    auto const &u = pddl.unroll;
    auto const &t = pddl.train;
    return {{"n_unrolls", u.n_unrolls},
            {"n_cg", u.n_cg},
            {"mu_init", u.mu_init},
            {"width", u.prox.width},
            {"blocks", u.prox.blocks},
            {"block_scale", u.prox.block_scale},
            {"K", t.K},
            {"rho", t.rho},
            {"lr", t.lr},
            {"steps", t.steps},
            {"lambda", t.lambda},
            {"consistency_region", t.region == ConsistencyRegion::Roi ? "roi" : "outer"}};
  }
  if (name == "eval") {
    return {{"cg_iters", eval.cg.max_iters},
            {"cg_tol", eval.cg.rel_tol},
            {"cg_mu", eval.cg.mu},
            {"panel_frames", eval.panel_frames},
            {"systolic_frames", eval.systolic_frames},
            {"corruption", eval.corruption}};
  }
  throw ConfigError("unknown config section: " + name);
}

json PipelineConfig::to_json() const
{
  json j{{"seed", seed}};
  for (auto const *s : {"phantom", "schedule", "ghost_net", "ovr", "pddl", "eval"}) { j[s] = section(s); }
  return j;
}

void validate(PipelineConfig const &cfg)
{
  validate(cfg.phantom.phantom);
  if (cfg.phantom.coils < 1) { throw ConfigError("phantom.coils must be >= 1"); }
  auto const &s = cfg.schedule;
  if (s.R_acq < 1 || s.R < s.R_acq || s.R % s.R_acq != 0) {
    throw ConfigError("schedule.R must be a multiple of schedule.R_acq");
  }
  if (cfg.phantom.phantom.n_pe % s.R != 0) { throw ConfigError("schedule.R must divide phantom.n_pe"); }
  if (cfg.phantom.phantom.T < 2 * s.R) { throw ConfigError("phantom.frames must be at least 2 R"); }
  if (s.offset0 < 0 || s.offset0 >= s.R_acq) { throw ConfigError("schedule.offset0 must lie in [0, R_acq)"); }
  validate(cfg.ghost_net.net);
  require_choice(cfg.ghost_net.labels, {"oracle", "reference"}, "ghost_net.labels");
  if (cfg.ghost_net.train_frames < 1 || cfg.ghost_net.train_frames > cfg.phantom.phantom.T) {
    throw ConfigError("ghost_net.train_frames must lie in [1, frames]");
  }
  require_choice(cfg.ovr.roi, {"detect", "truth"}, "ovr.roi");
  require_choice(cfg.ovr.background, {"ghostnet", "oracle"}, "ovr.background");
  require_choice(cfg.ovr.refresh, {"frame", "window"}, "ovr.refresh");
  if (!(cfg.ovr.threshold > 0.0 && cfg.ovr.threshold < 1.0)) { throw ConfigError("ovr.threshold must lie in (0, 1)"); }
  if (cfg.ovr.margin < 0) { throw ConfigError("ovr.margin must be >= 0"); }
  validate(cfg.pddl.unroll);
  validate(cfg.pddl.train);
  validate(cfg.eval.cg);
  for (int t : cfg.eval.panel_frames) {
    if (t < 0 || t >= cfg.phantom.phantom.T) { throw ConfigError("eval.panel_frames out of range"); }
  }
  for (int t : cfg.eval.systolic_frames) {
    if (t < 0 || t >= cfg.phantom.phantom.T) { throw ConfigError("eval.systolic_frames out of range"); }
  }
  if (!(cfg.eval.corruption >= 0.0)) { throw ConfigError("eval.corruption must be >= 0"); }
}

PipelineConfig load_config(fs::path const &path)
{
  std::ifstream in(path);
  if (!in) { throw ConfigError("cannot read config " + path.string()); }
  json j;
  try {
    j = json::parse(in);
  } catch (json::parse_error const &e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  PipelineConfig c = PipelineConfig::from_json(j);
  if (!c.workspace.empty() && fs::path(c.workspace).is_relative()) {
    c.workspace = (path.parent_path() / c.workspace).lexically_normal().string();
  }
  return c;
}

fs::path resolve_workspace(PipelineConfig const &cfg, std::string const &override_dir)
{
  if (!override_dir.empty()) { return override_dir; }
  if (!cfg.workspace.empty()) { return cfg.workspace; }
  return "workspace";
}

// ---------------------------------------------------------------------------
// Hashing

std::string sha256_hex(std::string_view bytes)
{
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw NumericalError("SHA-256 computation failed");
  }
  std::string out;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", md[i]);
    out += buf;
  }
  return out;
}

std::string sha256_file(fs::path const &path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) { throw ConfigError("cannot read " + path.string()); }
  std::ostringstream ss;
  ss << in.rdbuf();
  return sha256_hex(ss.str());
}

// ---------------------------------------------------------------------------
// Artifact I/O helpers

namespace {

void write_text(fs::path const &path, std::string const &text)
{
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) { throw ConfigError("cannot write " + path.string()); }
  out << text;
}

json read_json(fs::path const &path)
{
  std::ifstream in(path);
  if (!in) { throw ConfigError("missing artifact " + path.string()); }
  return json::parse(in);
}

void save_ovrt(fs::path const &path, Tensor const &t)
{
  fs::create_directories(path.parent_path());
  write_ovrt(path, t);
}

Tensor pack_coil_series(std::vector<CoilImages> const &xs)
{
  std::vector<cplx> values;
  auto const T = xs.size();
  auto const C = xs.at(0).size();
  auto const H = static_cast<std::uint64_t>(xs[0][0].rows());
  auto const W = static_cast<std::uint64_t>(xs[0][0].cols());
  values.reserve(T * C * H * W);
  for (auto const &frame : xs) {
    if (frame.size() != C) { throw ConfigError("pack_coil_series: coil count varies"); }
    for (auto const &x : frame) { values.insert(values.end(), x.data(), x.data() + x.size()); }
  }
  return make_tensor({T, C, H, W}, std::span<cplx const>(values));
}

void save_frames(fs::path const &path, std::vector<ComplexImage> const &frames)
{
  save_ovrt(path, pack_stack(frames));
}

void save_kspace(fs::path const &dir, std::string const &stem, KSpaceSeries const &k)
{
  auto const packed = pack_kspace(k);
  save_ovrt(dir / (stem + ".ovrt"), packed.data);
  save_ovrt(dir / (stem + "_lines.ovrt"), packed.line_mask);
}

void save_kspace(fs::path const &dir, std::string const &stem, std::vector<SampledKSpace> const &frames,
                 KSpaceSeries const &like)
{
  KSpaceSeries k = like;
  k.frames = frames;
  save_kspace(dir, stem, k);
}

ComplexImage combine(CoilImages const &x, CoilSensitivities const &sens) { return coil_combine(x, sens); }

void write_csv_losses(fs::path const &path, std::vector<double> const &losses)
{
  std::string out = "step,loss\n";
  char buf[64];
  for (size_t i = 0; i < losses.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g\n", i, losses[i]);
    out += buf;
  }
  write_text(path, out);
}

double roi_mean_magnitude(std::vector<ComplexImage> const &frames, RowInterval rows)
{
  double s = 0.0;
  long n = 0;
  for (auto const &f : frames) {
    s += f.middleRows(rows.lo, rows.size()).abs().sum();
    n += static_cast<long>(rows.size()) * f.cols();
  }
  return s / static_cast<double>(n);
}

} // namespace

FrameSeries load_frames(fs::path const &path)
{
  FrameSeries out;
  out.frames = unpack_stack(read_ovrt(path));
  return out;
}

std::vector<CoilImages> load_coil_series(fs::path const &path)
{
  Tensor const t = read_ovrt(path);
  if (t.dims.size() != 4) { throw ConfigError(path.string() + ": expected a [T, C, H, W] tensor"); }
  auto const values = t.as_complex();
  auto const T = t.dims[0], C = t.dims[1], H = t.dims[2], W = t.dims[3];
  std::vector<CoilImages> out(T);
  size_t pos = 0;
  for (std::uint64_t i = 0; i < T; ++i) {
    for (std::uint64_t c = 0; c < C; ++c) {
      ComplexImage x(static_cast<Eigen::Index>(H), static_cast<Eigen::Index>(W));
      std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(pos), H * W, x.data());
      pos += H * W;
      out[i].push_back(std::move(x));
    }
  }
  return out;
}

OvrMask load_mask(fs::path const &path, fs::path const &roi_json)
{
  json const j = read_json(roi_json);
  OvrMask m;
  m.mask = unpack_real(read_ovrt(path));
  m.roi_rows = {j.at("lo").get<int>(), j.at("hi").get<int>()};
  return m;
}

std::vector<SampledKSpace> load_kspace_frames(fs::path const &dir, std::string const &stem)
{
  return unpack_kspace(read_ovrt(dir / (stem + ".ovrt")), read_ovrt(dir / (stem + "_lines.ovrt")));
}

// ---------------------------------------------------------------------------
// Stage graph

std::vector<std::string> const &stage_names()
{
  static std::vector<std::string> const names{
    "simulate",          "composite",        "ghost-oracle",        "ghost-train",   "ghost-detect",
    "ovr-subtract",      "recon-tgrappa",    "recon-cgsense",       "pddl-train-masked",
    "pddl-train-full",   "pddl-train-naive", "pddl-train-baseline", "pddl-recon",    "evaluate",
  };
  return names;
}

namespace {

struct StageSpec
{
  std::vector<std::string> deps;
  std::vector<std::string> sections;
};

std::map<std::string, StageSpec> const &stage_specs()
{
  static std::map<std::string, StageSpec> const specs{
    {"simulate", {{}, {"seed", "phantom", "schedule"}}},
    {"composite", {{"simulate"}, {}}},
    {"ghost-oracle", {{"simulate", "composite"}, {"ghost_net"}}},
    {"ghost-train", {{"composite", "ghost-oracle"}, {"seed", "ghost_net"}}},
    {"ghost-detect", {{"simulate", "composite", "ghost-oracle", "ghost-train"}, {"ovr"}}},
    {"ovr-subtract", {{"simulate", "ghost-detect"}, {"ovr"}}},
    {"recon-tgrappa", {{"simulate"}, {}}},
    {"recon-cgsense", {{"simulate", "composite", "ghost-detect", "ovr-subtract"}, {"ovr", "eval"}}},
    {"pddl-train-masked", {{"simulate", "ghost-detect", "ovr-subtract"}, {"seed", "pddl"}}},
    {"pddl-train-full", {{"simulate", "ghost-detect", "ovr-subtract", "pddl-train-masked"}, {"seed", "pddl"}}},
    {"pddl-train-naive", {{"simulate", "ghost-detect", "ovr-subtract"}, {"seed", "pddl"}}},
    {"pddl-train-baseline", {{"simulate"}, {"seed", "pddl"}}},
    {"pddl-recon",
     {{"simulate", "ghost-detect", "ovr-subtract", "pddl-train-masked", "pddl-train-full", "pddl-train-naive",
       "pddl-train-baseline"},
      {"ovr", "eval"}}},
    {"evaluate",
     {{"simulate", "ghost-oracle", "ghost-detect", "recon-tgrappa", "recon-cgsense", "pddl-recon"}, {"eval"}}},
  };
  return specs;
}

StageSpec const &spec_of(std::string const &name)
{
  auto it = stage_specs().find(name);
  if (it == stage_specs().end()) { throw ConfigError("unknown stage: " + name); }
  return it->second;
}

json artifact_digests(fs::path const &dir)
{
  std::vector<fs::path> files;
  for (auto const &e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().filename() != "stage.json") { files.push_back(e.path()); }
  }
  std::sort(files.begin(), files.end());
  json out = json::object();
  for (auto const &f : files) { out[fs::relative(f, dir).generic_string()] = sha256_file(f); }
  return out;
}

std::string const kTrain = "train";
std::string const kTest = "test";

} // namespace

Pipeline::Pipeline(PipelineConfig cfg, fs::path workspace, Log log)
  : cfg_(std::move(cfg))
  , ws_(std::move(workspace))
  , log_(std::move(log))
{
  validate(cfg_);
}

void Pipeline::log(std::string const &msg) const
{
  if (log_) { log_(msg); }
}

fs::path Pipeline::stage_dir(std::string const &name) const
{
  spec_of(name);
  return ws_ / name;
}

std::vector<std::string> const &Pipeline::dependencies(std::string const &name) const { return spec_of(name).deps; }

std::string Pipeline::stage_key(std::string const &name) const
{
  StageSpec const &spec = spec_of(name);
  json j{{"stage", name}, {"format", 1}};
  for (auto const &s : spec.sections) { j["config"][s] = cfg_.section(s); }
  for (auto const &d : spec.deps) {
    fs::path const f = stage_dir(d) / "stage.json";
    if (!fs::exists(f)) { return {}; }
    j["upstream"][d] = read_json(f).at("artifacts");
  }
  return sha256_hex(j.dump());
}

bool Pipeline::is_current(std::string const &name) const
{
  fs::path const f = stage_dir(name) / "stage.json";
  if (!fs::exists(f)) { return false; }
  for (auto const &d : dependencies(name)) {
    if (!is_current(d)) { return false; }
  }
  std::string const key = stage_key(name);
  return !key.empty() && read_json(f).at("key").get<std::string>() == key;
}

void Pipeline::run_all(bool force)
{
  for (auto const &name : stage_names()) {
    if (!force && is_current(name)) {
      log("[" + name + "] up to date");
      continue;
    }
    run_stage(name);
  }
}

void Pipeline::run_with_dependencies(std::string const &name)
{
  for (auto const &d : dependencies(name)) {
    if (!is_current(d)) { run_with_dependencies(d); }
  }
  run_stage(name);
}

void Pipeline::run_stage(std::string const &name)
{
  for (auto const &d : dependencies(name)) {
    if (!is_current(d)) {
      throw StageError(name, "upstream stage '" + d + "' is missing or stale; run it first");
    }
  }
  fs::path const dir = stage_dir(name);
  fs::remove(dir / "stage.json");
  fs::create_directories(dir);
  auto const t0 = std::chrono::steady_clock::now();
  log("[" + name + "] running");
  try {
    execute(name);
  } catch (ConfigError const &e) {
    throw ConfigError("stage " + name + ": " + e.what());
  } catch (NumericalError const &e) {
    throw NumericalError("stage " + name + ": " + e.what());
  } catch (StageError const &) {
    throw;
  } catch (std::exception const &e) {
    throw StageError(name, e.what());
  }
  json const done{{"stage", name}, {"key", stage_key(name)}, {"artifacts", artifact_digests(dir)}};
  write_text(dir / "stage.json", done.dump(2) + "\n");
  double const secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f s", secs);
  log("[" + name + "] done in " + buf);
}

// ---------------------------------------------------------------------------
// Dataset loading

DatasetArtifacts load_dataset(Pipeline const &p, std::string const &which)
{
  auto const &cfg = p.config();
  fs::path const dir = p.stage_dir("simulate") / which;
  json const meta = read_json(dir / "truth.json");
  DatasetArtifacts d;
  d.truth.frames = load_frames(dir / "frames.ovrt");
  d.truth.moving = load_frames(dir / "moving.ovrt");
  d.truth.background = load_frames(dir / "background.ovrt");
  d.truth.stationary = d.truth.background[0];
  d.truth.frames.frame_period = d.truth.moving.frame_period = d.truth.background.frame_period =
    cfg.phantom.phantom.frame_period;
  d.truth.roi_rows = {meta.at("roi_lo").get<int>(), meta.at("roi_hi").get<int>()};
  d.sens.maps = unpack_stack(read_ovrt(p.stage_dir("simulate") / "sens.ovrt"));
  double const sigma = meta.at("noise_sigma").get<double>();

  auto const &s = cfg.schedule;
  SamplingSchedule const low = make_schedule(cfg.phantom.phantom.n_pe, s.R_acq, cfg.phantom.phantom.T, s.offset0,
                                             s.with_center);
  d.ksp_low = {load_kspace_frames(dir, "kspace_low"), low, d.sens, sigma};
  d.ksp = {load_kspace_frames(dir, "kspace"), retro_undersample(low, s.R), d.sens, sigma};
  for (int t = 0; t < d.ksp.size(); ++t) {
    if (d.ksp[t].lines != d.ksp.schedule.frame_lines(t) || d.ksp_low[t].lines != low.frame_lines(t)) {
      throw ConfigError("stored k-space lines disagree with the configured schedule");
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// Stage bodies

void Pipeline::execute(std::string const &name)
{
  auto const &c = cfg_;
  int const T = c.phantom.phantom.T;
  Dims const dims{c.phantom.phantom.n_pe, c.phantom.phantom.n_fe};
  fs::path const dir = stage_dir(name);
  auto sets = {kTrain, kTest};

  if (name == "simulate") {
    CoilSensitivities const sens = make_coil_maps(c.phantom.coils, dims);
    save_frames(dir / "sens.ovrt", sens.maps);
    write_text(dir / "config.json", c.to_json().dump(2) + "\n");
    SamplingSchedule const low =
      make_schedule(dims.n_pe, c.schedule.R_acq, T, c.schedule.offset0, c.schedule.with_center);
    std::uint64_t tag = 1;
    for (auto const &which : sets) {
      PhantomConfig pc = c.phantom.phantom;
      pc.seed = mix_seed(c.seed, tag);
      PhantomTruth const truth = make_phantom(pc);
      double const sigma = c.phantom.snr_db > 0 ? noise_sigma_for_snr(truth, sens, low, c.phantom.snr_db) : 0.0;
      KSpaceSeries const ksp_low = simulate_acquisition(truth, sens, low, sigma, mix_seed(c.seed, tag, 0xacc));
      KSpaceSeries const ksp = retro_undersample(ksp_low, c.schedule.R);
      fs::path const d = dir / which;
      save_frames(d / "frames.ovrt", truth.frames.frames);
      save_frames(d / "moving.ovrt", truth.moving.frames);
      save_frames(d / "background.ovrt", truth.background.frames);
      save_kspace(d, "kspace_low", ksp_low);
      save_kspace(d, "kspace", ksp);
      json const meta{{"roi_lo", truth.roi_rows.lo},
                      {"roi_hi", truth.roi_rows.hi},
                      {"noise_sigma", sigma},
                      {"phantom_seed", pc.seed}};
      write_text(d / "truth.json", meta.dump(2) + "\n");
      ++tag;
    }
    return;
  }

  if (name == "composite") {
    for (auto const &which : sets) {
      DatasetArtifacts const d = load_dataset(*this, which);
      save_ovrt(dir / which / "composites.ovrt", pack_coil_series(form_composites(d.ksp)));
    }
    return;
  }

  if (name == "ghost-oracle") {
    for (auto const &which : sets) {
      DatasetArtifacts const d = load_dataset(*this, which);
      std::vector<CoilImages> oracle, background;
      for (int t = 0; t < T; ++t) {
        GhostDecomposition g = decompose_oracle(d.truth, d.ksp.schedule, d.sens, t);
        oracle.push_back(std::move(g.ghost));
        background.push_back(std::move(g.background));
      }
      fs::path const out = dir / which;
      save_ovrt(out / "ghost.ovrt", pack_coil_series(oracle));
      save_ovrt(out / "background.ovrt", pack_coil_series(background));
      if (which == kTrain) {
        if (c.ghost_net.labels == "reference") {
          std::vector<CoilImages> ref;
          for (int t = 0; t < T; ++t) { ref.push_back(ghost_reference(d.ksp_low, c.schedule.R, t)); }
          save_ovrt(out / "labels.ovrt", pack_coil_series(ref));
        } else {
          save_ovrt(out / "labels.ovrt", pack_coil_series(oracle));
        }
      }
    }
    return;
  }

  if (name == "ghost-train") {
    auto const composites = load_coil_series(stage_dir("composite") / kTrain / "composites.ovrt");
    auto const labels = load_coil_series(stage_dir("ghost-oracle") / kTrain / "labels.ovrt");
    std::vector<int> frames(static_cast<size_t>(c.ghost_net.train_frames));
    std::iota(frames.begin(), frames.end(), 0);
    GhostNetConfig gc = c.ghost_net.net;
    gc.seed = mix_seed(c.seed, 5);
    GhostTrainResult const res = train_ghost_net(make_ghost_dataset(composites, labels, frames), gc);
    nn::save_parameters(dir / "weights", res.params.params, {{"resnet", res.params.config.to_json()}});
    write_csv_losses(dir / "losses.csv", res.losses);
    write_text(dir / "train.json", json{{"skipped_steps", res.skipped_steps}}.dump(2) + "\n");
    return;
  }

  if (name == "ghost-detect") {
    json cfg_json;
    nn::ParameterSet ps = nn::load_parameters(stage_dir("ghost-train") / "weights", &cfg_json);
    nn::ResNetParams const net{nn::ResNetConfig::from_json(cfg_json.at("resnet")), std::move(ps)};
    for (auto const &which : sets) {
      DatasetArtifacts const d = load_dataset(*this, which);
      auto const composites = load_coil_series(stage_dir("composite") / which / "composites.ovrt");
      std::vector<CoilImages> ghosts, backgrounds;
      for (int t = 0; t < T; ++t) {
        ghosts.push_back(predict_ghost(net, composites, t));
        backgrounds.push_back(estimate_background(composites[static_cast<size_t>(t)], ghosts.back()));
      }
      if (c.ovr.background == "oracle") {
        backgrounds = load_coil_series(stage_dir("ghost-oracle") / which / "background.ovrt");
      }
      if (c.ovr.refresh == "window") {
        int const R = c.schedule.R;
        std::vector<CoilImages> held(backgrounds.size());
        for (int t = 0; t < T; ++t) {
          held[static_cast<size_t>(t)] = backgrounds[static_cast<size_t>(std::min(T - 1, (t / R) * R + R / 2))];
        }
        backgrounds = std::move(held);
      }
      fs::path const out = dir / which;
      save_ovrt(out / "ghost.ovrt", pack_coil_series(ghosts));
      save_ovrt(out / "background.ovrt", pack_coil_series(backgrounds));

      RoiDetection det;
      if (c.ovr.roi == "detect") {
        std::vector<ComplexImage> combined;
        for (auto const &x : composites) { combined.push_back(combine(x, d.sens)); }
        det = threshold_roi_detect(combined, c.schedule.R, c.ovr.threshold);
        if (det.fallback) { log("[ghost-detect] " + det.warning); }
      } else {
        det.rows = d.truth.roi_rows;
      }
      OvrMask const m = make_ovr_mask(det.rows, dims, c.ovr.margin);
      save_ovrt(out / "mask.ovrt", pack_mask(m.mask));
      json const roi{{"lo", m.roi_rows.lo},
                     {"hi", m.roi_rows.hi},
                     {"detected_lo", det.rows.lo},
                     {"detected_hi", det.rows.hi},
                     {"fallback", det.fallback},
                     {"warning", det.warning},
                     {"truth_lo", d.truth.roi_rows.lo},
                     {"truth_hi", d.truth.roi_rows.hi}};
      write_text(out / "roi.json", roi.dump(2) + "\n");
    }
    return;
  }

  if (name == "ovr-subtract") {
    for (auto const &which : sets) {
      DatasetArtifacts const d = load_dataset(*this, which);
      fs::path const in = stage_dir("ghost-detect") / which;
      auto const backgrounds = load_coil_series(in / "background.ovrt");
      OvrMask const m = load_mask(in / "mask.ovrt", in / "roi.json");
      std::vector<SampledKSpace> y_ovr;
      for (int t = 0; t < T; ++t) { y_ovr.push_back(subtract_outer_volume(d.ksp[t], backgrounds[static_cast<size_t>(t)], m)); }
      save_kspace(dir / which, "kspace_ovr", y_ovr, d.ksp);
      if (which == kTest) {
        auto const composites = load_coil_series(stage_dir("composite") / which / "composites.ovrt");
        std::vector<SampledKSpace> y_naive;
        for (int t = 0; t < T; ++t) {
          y_naive.push_back(subtract_outer_volume(d.ksp[t], composites[static_cast<size_t>(t)], m));
        }
        save_kspace(dir / which, "kspace_ovr_naive", y_naive, d.ksp);
      }
    }
    return;
  }

  if (name == "recon-tgrappa") {
    DatasetArtifacts const d = load_dataset(*this, kTest);
    std::vector<ComplexImage> r, r_low;
    for (int t = 0; t < T; ++t) {
      r.push_back(tgrappa_recon(d.ksp, t));
      r_low.push_back(tgrappa_recon(d.ksp_low, t));
    }
    save_frames(dir / "tgrappa.ovrt", r);
    save_frames(dir / "tgrappa_racq.ovrt", r_low);
    return;
  }

  if (name == "recon-cgsense") {
    DatasetArtifacts const d = load_dataset(*this, kTest);
    fs::path const det = stage_dir("ghost-detect") / kTest;
    OvrMask const m = load_mask(det / "mask.ovrt", det / "roi.json");
    CoilSensitivities const masked = mask_sensitivities(d.sens, m);
    auto const backgrounds = load_coil_series(det / "background.ovrt");
    auto const composites = load_coil_series(stage_dir("composite") / kTest / "composites.ovrt");
    auto const y_ovr = load_kspace_frames(stage_dir("ovr-subtract") / kTest, "kspace_ovr");
    auto const y_naive = load_kspace_frames(stage_dir("ovr-subtract") / kTest, "kspace_ovr_naive");
    std::vector<ComplexImage> plain, ovr, naive;
    json flags = json::array();
    for (int t = 0; t < T; ++t) {
      auto const idx = static_cast<size_t>(t);
      CgResult const a = cg_sense(d.ksp[t], d.sens, c.eval.cg);
      CgResult const b = cg_sense(y_ovr[idx], masked, c.eval.cg);
      CgResult const n = cg_sense(y_naive[idx], masked, c.eval.cg);
      plain.push_back(a.image);
      ovr.push_back(compose_final(b.image, combine(backgrounds[idx], d.sens), m));
      naive.push_back(compose_final(n.image, combine(composites[idx], d.sens), m));
      flags.push_back({{"frame", t},
                       {"cgsense_iters", a.iterations},
                       {"cg_ovr_iters", b.iterations},
                       {"cg_ovr_naive_iters", n.iterations},
                       {"diverged", a.diverged || b.diverged || n.diverged}});
    }
    save_frames(dir / "cgsense.ovrt", plain);
    save_frames(dir / "cg_ovr.ovrt", ovr);
    save_frames(dir / "cg_ovr_naive.ovrt", naive);
    write_text(dir / "cg.json", flags.dump(2) + "\n");
    return;
  }

  if (name.rfind("pddl-train-", 0) == 0) {
    std::string const variant = name.substr(std::string("pddl-train-").size());
    DatasetArtifacts const d = load_dataset(*this, kTrain);
    fs::path const det = stage_dir("ghost-detect") / kTrain;
    OvrMask const m = load_mask(det / "mask.ovrt", det / "roi.json");
    PddlTrainConfig tc = c.pddl.train;
    std::uint64_t const variant_tag = variant == "masked" ? 1 : variant == "full" ? 2 : variant == "naive" ? 3 : 4;
    tc.seed = mix_seed(c.seed, 6, variant_tag);
    SsduMaskSet const masks = ssdu_partition(d.ksp.schedule, tc.K, tc.rho, mix_seed(c.seed, 7));

    std::vector<SampledKSpace> y;
    CoilSensitivities sens = d.sens;
    ConsistencyTarget target;
    ConsistencyTarget const *consistency = nullptr;
    if (variant == "baseline") {
      y = d.ksp.frames;
      tc.lambda = 0.0;
    } else {
      y = load_kspace_frames(stage_dir("ovr-subtract") / kTrain, "kspace_ovr");
      if (variant == "masked") {
        sens = mask_sensitivities(d.sens, m);
        tc.lambda = 0.0;
      } else if (variant == "naive") {
        tc.lambda = 0.0;
      } else {
        PddlParams const masked_net = load_pddl(stage_dir("pddl-train-masked") / "weights");
        target.masked_recon = reconstruct_series(masked_net, y, mask_sensitivities(d.sens, m), nullptr, nullptr).frames;
        target.mask = m;
        consistency = &target;
      }
    }
    auto const t0 = std::chrono::steady_clock::now();
    PddlTrainResult const res = train_pddl(y, sens, masks, c.pddl.unroll, tc, consistency, [&](int step, double l) {
      if ((step + 1) % 25 == 0) {
        double const secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        char buf[128];
        std::snprintf(buf, sizeof buf, "[%s] step %d loss %.4f (%.0f s)", name.c_str(), step + 1, l, secs);
        log(buf);
      }
    });
    save_pddl(dir / "weights", res.params);
    write_csv_losses(dir / "losses.csv", res.losses);
    write_text(dir / "train.json",
               json{{"variant", variant}, {"lambda", tc.lambda}, {"skipped_steps", res.skipped_steps},
                    {"mu", res.params.mu()}}
                   .dump(2) +
                 "\n");
    return;
  }

  if (name == "pddl-recon") {
    DatasetArtifacts const d = load_dataset(*this, kTest);
    fs::path const det = stage_dir("ghost-detect") / kTest;
    OvrMask const m = load_mask(det / "mask.ovrt", det / "roi.json");
    CoilSensitivities const masked = mask_sensitivities(d.sens, m);
    auto const bg_coils = load_coil_series(det / "background.ovrt");
    auto const y_ovr = load_kspace_frames(stage_dir("ovr-subtract") / kTest, "kspace_ovr");
    std::vector<ComplexImage> bg;
    for (auto const &b : bg_coils) { bg.push_back(combine(b, d.sens)); }

    auto model = [&](char const *v) { return load_pddl(stage_dir(std::string("pddl-train-") + v) / "weights"); };
    PddlParams const p_masked = model("masked"), p_full = model("full"), p_naive = model("naive"),
                     p_base = model("baseline");
    save_frames(dir / "proposed.ovrt", reconstruct_series(p_full, y_ovr, d.sens, &bg, &m).frames);
    save_frames(dir / "pddl_masked.ovrt", reconstruct_series(p_masked, y_ovr, masked, &bg, &m).frames);
    save_frames(dir / "pddl_naive.ovrt", reconstruct_series(p_naive, y_ovr, d.sens, &bg, &m).frames);
    save_frames(dir / "pddl_baseline.ovrt", reconstruct_series(p_base, d.ksp.frames, d.sens, nullptr, nullptr).frames);

    // Failure-mode probe: subtract a deliberately mis-scaled background.
    std::vector<SampledKSpace> y_bad;
    std::vector<ComplexImage> bg_bad;
    for (int t = 0; t < T; ++t) {
      auto const idx = static_cast<size_t>(t);
      CoilImages scaled;
      for (auto const &b : bg_coils[idx]) { scaled.push_back(b * c.eval.corruption); }
      y_bad.push_back(subtract_outer_volume(d.ksp[t], scaled, m));
      bg_bad.push_back(bg[idx] * c.eval.corruption);
    }
    save_frames(dir / "probe_masked.ovrt", reconstruct_series(p_masked, y_bad, masked, &bg_bad, &m).frames);
    save_frames(dir / "probe_proposed.ovrt", reconstruct_series(p_full, y_bad, d.sens, &bg_bad, &m).frames);
    save_frames(dir / "probe_naive.ovrt", reconstruct_series(p_naive, y_bad, d.sens, &bg_bad, &m).frames);
    return;
  }

  if (name == "evaluate") {
    DatasetArtifacts const d = load_dataset(*this, kTest);
    RowInterval const roi = d.truth.roi_rows;
    std::vector<std::pair<std::string, fs::path>> const methods{
      {"tgrappa", stage_dir("recon-tgrappa") / "tgrappa.ovrt"},
      {"tgrappa_racq", stage_dir("recon-tgrappa") / "tgrappa_racq.ovrt"},
      {"cgsense", stage_dir("recon-cgsense") / "cgsense.ovrt"},
      {"cg_ovr_naive", stage_dir("recon-cgsense") / "cg_ovr_naive.ovrt"},
      {"cg_ovr", stage_dir("recon-cgsense") / "cg_ovr.ovrt"},
      {"pddl_baseline", stage_dir("pddl-recon") / "pddl_baseline.ovrt"},
      {"pddl_masked", stage_dir("pddl-recon") / "pddl_masked.ovrt"},
      {"pddl_naive", stage_dir("pddl-recon") / "pddl_naive.ovrt"},
      {"proposed", stage_dir("pddl-recon") / "proposed.ovrt"},
    };
    std::map<std::string, FrameSeries> recon;
    for (auto const &[label, path] : methods) { recon[label] = load_frames(path); }

    std::vector<MetricsRow> rows;
    json summary;
    for (auto const &[label, path] : methods) {
      FrameSeries const &r = recon[label];
      double roi_sum = 0.0, ssim_sum = 0.0, sys_sum = 0.0;
      for (int t = 0; t < T; ++t) {
        ComplexImage const &ref = d.truth.frames[t];
        MetricsRow row{t, label, psnr(ref, r[t]), ssim(ref.abs(), r[t].abs()), psnr(ref, r[t], roi)};
        roi_sum += row.roi_psnr;
        ssim_sum += row.ssim;
        rows.push_back(row);
      }
      for (int t : c.eval.systolic_frames) { sys_sum += psnr(d.truth.frames[t], r[t], roi); }
      summary["methods"][label] = {
        {"mean_roi_psnr", roi_sum / T},
        {"mean_ssim", ssim_sum / T},
        {"systolic_roi_psnr", c.eval.systolic_frames.empty() ? 0.0 : sys_sum / static_cast<double>(c.eval.systolic_frames.size())},
        {"temporal_error", temporal_error(d.truth.frames, r, roi)},
      };
    }
    write_text(dir / "metrics.csv", metrics_csv(rows));

    // Ghost estimate quality on the test series.
    auto const g_est = load_coil_series(stage_dir("ghost-detect") / kTest / "ghost.ovrt");
    auto const g_ref = load_coil_series(stage_dir("ghost-oracle") / kTest / "ghost.ovrt");
    double num = 0.0, den = 0.0;
    for (int t = 0; t < T; ++t) {
      for (size_t k = 0; k < g_ref[static_cast<size_t>(t)].size(); ++k) {
        num += (g_est[static_cast<size_t>(t)][k] - g_ref[static_cast<size_t>(t)][k]).abs2().sum();
        den += g_ref[static_cast<size_t>(t)][k].abs2().sum();
      }
    }
    summary["ghost_residual"] = std::sqrt(num / den);
    summary["roi"] = read_json(stage_dir("ghost-detect") / kTest / "roi.json");

    // Failure-mode probe: ROI change caused by the corrupted background, and ROI mean signal.
    double const truth_mean = roi_mean_magnitude(d.truth.frames.frames, roi);
    double roi_energy = 0.0;
    for (auto const &f : d.truth.frames.frames) { roi_energy += f.middleRows(roi.lo, roi.size()).abs2().sum(); }
    json probes;
    for (auto const &[probe, clean] : {std::pair{"probe_masked", "pddl_masked"}, std::pair{"probe_proposed", "proposed"},
                                       std::pair{"probe_naive", "pddl_naive"}}) {
      FrameSeries const bad = load_frames(stage_dir("pddl-recon") / (std::string(probe) + ".ovrt"));
      double e = 0.0;
      for (int t = 0; t < T; ++t) { e += (bad[t] - recon[clean][t]).middleRows(roi.lo, roi.size()).abs2().sum(); }
      probes[clean]["artifact_energy"] = e / roi_energy;
    }
    for (auto const *label : {"pddl_masked", "pddl_naive", "proposed", "pddl_baseline"}) {
      probes[label]["roi_mean_ratio"] = roi_mean_magnitude(recon[label].frames, roi) / truth_mean;
    }
    summary["probes"] = probes;
    write_text(dir / "summary.json", summary.dump(2) + "\n");

    fs::create_directories(dir / "panels");
    for (int t : c.eval.panel_frames) {
      std::string const tag = "_t" + std::to_string(t) + ".png";
      auto const &truth = d.truth.frames[t];
      write_panel(dir / "panels" / ("naive_vs_corrected_ovr" + tag), {truth, recon["cg_ovr_naive"][t], recon["cg_ovr"][t]});
      write_panel(dir / "panels" / ("sensitivity_variants" + tag),
                  {truth, recon["pddl_masked"][t], recon["pddl_naive"][t], recon["proposed"][t]});
      write_panel(dir / "panels" / ("methods" + tag),
                  {truth, recon["tgrappa"][t], recon["pddl_baseline"][t], recon["proposed"][t]});
    }
    return;
  }

  throw ConfigError("unknown stage: " + name);
}

} // namespace ovrcine
