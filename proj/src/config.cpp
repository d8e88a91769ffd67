#include "bcihand/pipeline.hpp"

#include <openssl/evp.h>

#include <fstream>
#include <set>
#include <sstream>

namespace bcihand {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

ordered_json pair(double a, double b) { return ordered_json::array({a, b}); }

ordered_json motor_json(const MotorSourceConfig& m) {
  return {{"center_hz", m.center_hz},
          {"erd_depth", {{"Wrist", m.erd_depth_wrist}, {"Finger", m.erd_depth_finger}}},
          {"erd_window_s", pair(m.erd_start_s, m.erd_end_s)},
          {"ers_rebound", m.ers_rebound},
          {"ers_duration_s", m.ers_duration_s},
          {"ramp_s", m.ramp_s},
          {"amplitude_uv", m.amplitude_uv}};
}

// Walks one JSON object, remembering which keys were consumed so that the
// leftovers can be reported.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_.empty() ? "/" : path_, "expected an object");
  }

  [[noreturn]] static void fail(const std::string& where, const std::string& what) {
    throw Error(ErrorKind::ConfigError, where + ": " + what);
  }

  std::string at(const std::string& key) const { return path_ + "/" + key; }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void get(const std::string& key, double& out) {
    if (auto v = find(key)) {
      if (!v->is_number()) fail(at(key), "expected a number");
      out = v->get<double>();
    }
  }
  void get(const std::string& key, bool& out) {
    if (auto v = find(key)) {
      if (!v->is_boolean()) fail(at(key), "expected true or false");
      out = v->get<bool>();
    }
  }
  void get(const std::string& key, std::string& out) {
    if (auto v = find(key)) {
      if (!v->is_string()) fail(at(key), "expected a string");
      out = v->get<std::string>();
    }
  }
  template <class Int>
    requires std::is_integral_v<Int>
  void get(const std::string& key, Int& out) {
    if (auto v = find(key)) {
      if (!v->is_number_integer()) fail(at(key), "expected an integer");
      if constexpr (std::is_unsigned_v<Int>) {
        if (v->is_number_unsigned() || v->get<long long>() >= 0) {
          out = v->get<Int>();
          return;
        }
        fail(at(key), "expected a non-negative integer");
      } else {
        out = v->get<Int>();
      }
    }
  }
  void get_pair(const std::string& key, double& a, double& b) {
    if (auto v = find(key)) {
      if (!v->is_array() || v->size() != 2 || !(*v)[0].is_number() || !(*v)[1].is_number()) {
        fail(at(key), "expected [number, number]");
      }
      a = (*v)[0].get<double>();
      b = (*v)[1].get<double>();
    }
  }
  template <class F>
  void object(const std::string& key, F&& f) {
    if (auto v = find(key)) {
      Reader sub(*v, at(key));
      f(sub);
      sub.finish();
    }
  }
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) fail(at(it.key()), "unknown key");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_motor(Reader& r, MotorSourceConfig& m) {
  r.get("center_hz", m.center_hz);
  r.object("erd_depth", [&](Reader& d) {
    d.get("Wrist", m.erd_depth_wrist);
    d.get("Finger", m.erd_depth_finger);
  });
  r.get_pair("erd_window_s", m.erd_start_s, m.erd_end_s);
  r.get("ers_rebound", m.ers_rebound);
  r.get("ers_duration_s", m.ers_duration_s);
  r.get("ramp_s", m.ramp_s);
  r.get("amplitude_uv", m.amplitude_uv);
}

template <class T, class Parse>
void read_enum_list(Reader& r, const std::string& key, std::vector<T>& out, Parse parse) {
  if (auto v = r.find(key)) {
    if (!v->is_array()) Reader::fail(r.at(key), "expected an array of strings");
    out.clear();
    for (std::size_t i = 0; i < v->size(); ++i) {
      const auto& e = (*v)[i];
      if (!e.is_string()) Reader::fail(r.at(key) + "/" + std::to_string(i), "expected a string");
      try {
        out.push_back(parse(e.get<std::string>()));
      } catch (const Error& ex) {
        Reader::fail(r.at(key) + "/" + std::to_string(i), ex.what());
      }
    }
  }
}

} // namespace

ordered_json to_json(const PipelineConfig& c) {
  ordered_json j;
  j["dataset_dir"] = c.dataset_dir;
  j["output_dir"] = c.output_dir;
  j["run_synth"] = c.run_synth;
  j["seed"] = c.seed;

  const auto& s = c.synth;
  ordered_json motors = ordered_json::array();
  for (const auto& m : s.motor_sources) motors.push_back(motor_json(m));
  ordered_json hands = ordered_json::array(), conds = ordered_json::array(), spikes = ordered_json::array();
  for (auto h : s.hands) hands.push_back(std::string(to_string(h)));
  for (auto k : s.conditions) conds.push_back(std::string(to_string(k)));
  for (auto t : s.spike_trials) spikes.push_back(t);
  j["synth"] = {{"n_subjects", s.n_subjects},
                {"n_channels", s.n_channels},
                {"fs", s.fs},
                {"n_sources", s.n_sources},
                {"n_artifact_sources", s.n_artifact_sources},
                {"motor_sources", motors},
                {"burst", {{"sigma", s.burst_sigma}, {"sigma_erd", s.burst_sigma_erd}, {"tau_s", s.burst_tau_s}, {"normalise", s.burst_normalise}, {"band_lo_hz", s.burst_band_lo_hz}, {"band_hi_hz", s.burst_band_hi_hz}}},
                {"noise",
                 {{"pink_exponent", s.pink_exponent},
                  {"pink_amplitude_uv", s.pink_amplitude_uv},
                  {"modulation_sigma", s.pink_modulation_sigma},
                  {"modulation_tau_s", s.pink_modulation_tau_s},
                  {"snr_db", s.snr_db}}},
                {"artifacts",
                 {{"rate_hz", s.artifact_rate_hz},
                  {"duration_s", s.artifact_duration_s},
                  {"amplitude_uv", s.artifact_amplitude_uv},
                  {"spike_rate", s.spike_rate},
                  {"spike_amp_uv", s.spike_amp_uv},
                  {"spike_trials", spikes}}},
                {"trials_per_movement", s.trials_per_movement},
                {"hands", hands},
                {"conditions", conds},
                {"mixing_scale", s.mixing_scale},
                {"max_condition", s.max_condition},
                {"block_s", s.block_s},
                {"event_offset_s", s.event_offset_s}};

  const auto& p = c.preprocess;
  j["preprocess"] = {{"broadband_hz", pair(p.broadband_lo_hz, p.broadband_hi_hz)},
                     {"filter_order", p.filter_order},
                     {"notch_hz", p.notch_hz},
                     {"notch_q", p.notch_q},
                     {"amp_limit_uv", p.amp_limit_uv},
                     {"var_ratio_limit", p.var_ratio_limit},
                     {"band_hz", pair(p.band.lo_hz, p.band.hi_hz)}};

  const auto& im = c.ica.infomax;
  j["ica"] = {{"retain", c.ica.retain},
              {"lr0", im.lr0},
              {"lr_scale", im.lr_scale},
              {"anneal", im.anneal},
              {"anneal_deg", im.anneal_deg},
              {"max_iter", im.max_iter},
              {"tol", im.tol},
              {"max_restarts", im.max_restarts},
              {"block", im.block}};

  const auto& e = c.erd;
  j["erd"] = {{"band_hz", pair(e.band.lo_hz, e.band.hi_hz)},
              {"smooth_ms", e.smooth_ms},
              {"reference_window_s", pair(e.reference.start_s, e.reference.end_s)},
              {"movement_window_s", pair(e.movement.start_s, e.movement.end_s)},
              {"post_window_s", pair(e.post.start_s, e.post.end_s)},
              {"score_threshold", e.score_threshold},
              {"k_min", e.k_min},
              {"k_max", e.k_max}};

  const auto& f = c.features;
  ordered_json bands = ordered_json::array();
  for (const auto& b : f.grid.bands) bands.push_back(pair(b.lo_hz, b.hi_hz));
  j["features"] = {{"t_start_ms", f.grid.t_start_ms},
                   {"t_end_ms", f.grid.t_end_ms},
                   {"window_ms", f.grid.window_ms},
                   {"step_ms", f.grid.step_ms},
                   {"bands_hz", bands},
                   {"nfft", f.grid.nfft},
                   {"k", f.k},
                   {"nested_selection", f.nested_selection},
                   {"log_power", f.log_power}};

  const auto& k = c.classify;
  j["classify"] = {{"shrinkage", k.shrinkage},
                   {"outlier_filter", k.outlier_filter},
                   {"outlier_quantile", k.outlier_quantile},
                   {"mlp",
                    {{"hidden", k.mlp.hidden},
                     {"learning_rate", k.mlp.learning_rate},
                     {"epochs", k.mlp.epochs},
                     {"patience", k.mlp.patience},
                     {"min_improvement", k.mlp.min_improvement},
                     {"train_fraction", k.mlp.train_fraction}}}};
  return j;
}

PipelineConfig config_from_json(const json& j) {
  PipelineConfig c;
  Reader r(j, "");
  r.get("dataset_dir", c.dataset_dir);
  r.get("output_dir", c.output_dir);
  r.get("run_synth", c.run_synth);
  r.get("seed", c.seed);

  r.object("synth", [&](Reader& s) {
    auto& y = c.synth;
    s.get("n_subjects", y.n_subjects);
    s.get("n_channels", y.n_channels);
    s.get("fs", y.fs);
    s.get("n_sources", y.n_sources);
    s.get("n_artifact_sources", y.n_artifact_sources);
    if (auto v = s.find("motor_sources")) {
      if (!v->is_array()) Reader::fail(s.at("motor_sources"), "expected an array");
      y.motor_sources.clear();
      for (std::size_t i = 0; i < v->size(); ++i) {
        MotorSourceConfig m;
        Reader mr((*v)[i], s.at("motor_sources") + "/" + std::to_string(i));
        read_motor(mr, m);
        mr.finish();
        y.motor_sources.push_back(m);
      }
    }
    s.object("burst", [&](Reader& b) {
      b.get("sigma", y.burst_sigma);
      b.get("sigma_erd", y.burst_sigma_erd);
      b.get("tau_s", y.burst_tau_s);
      b.get("normalise", y.burst_normalise);
      b.get("band_lo_hz", y.burst_band_lo_hz);
      b.get("band_hi_hz", y.burst_band_hi_hz);
    });
    s.object("noise", [&](Reader& n) {
      n.get("pink_exponent", y.pink_exponent);
      n.get("pink_amplitude_uv", y.pink_amplitude_uv);
      n.get("modulation_sigma", y.pink_modulation_sigma);
      n.get("modulation_tau_s", y.pink_modulation_tau_s);
      n.get("snr_db", y.snr_db);
    });
    s.object("artifacts", [&](Reader& a) {
      a.get("rate_hz", y.artifact_rate_hz);
      a.get("duration_s", y.artifact_duration_s);
      a.get("amplitude_uv", y.artifact_amplitude_uv);
      a.get("spike_rate", y.spike_rate);
      a.get("spike_amp_uv", y.spike_amp_uv);
      if (auto v = a.find("spike_trials")) {
        if (!v->is_array()) Reader::fail(a.at("spike_trials"), "expected an array of indices");
        y.spike_trials.clear();
        for (std::size_t i = 0; i < v->size(); ++i) {
          if (!(*v)[i].is_number_unsigned()) Reader::fail(a.at("spike_trials") + "/" + std::to_string(i), "expected a non-negative integer");
          y.spike_trials.push_back((*v)[i].get<std::size_t>());
        }
      }
    });
    s.get("trials_per_movement", y.trials_per_movement);
    read_enum_list(s, "hands", y.hands, parse_hand);
    read_enum_list(s, "conditions", y.conditions, parse_condition);
    s.get("mixing_scale", y.mixing_scale);
    s.get("max_condition", y.max_condition);
    s.get("block_s", y.block_s);
    s.get("event_offset_s", y.event_offset_s);
  });

  r.object("preprocess", [&](Reader& p) {
    auto& x = c.preprocess;
    p.get_pair("broadband_hz", x.broadband_lo_hz, x.broadband_hi_hz);
    p.get("filter_order", x.filter_order);
    p.get("notch_hz", x.notch_hz);
    p.get("notch_q", x.notch_q);
    p.get("amp_limit_uv", x.amp_limit_uv);
    p.get("var_ratio_limit", x.var_ratio_limit);
    p.get_pair("band_hz", x.band.lo_hz, x.band.hi_hz);
  });

  r.object("ica", [&](Reader& i) {
    auto& m = c.ica.infomax;
    i.get("retain", c.ica.retain);
    i.get("lr0", m.lr0);
    i.get("lr_scale", m.lr_scale);
    i.get("anneal", m.anneal);
    i.get("anneal_deg", m.anneal_deg);
    i.get("max_iter", m.max_iter);
    i.get("tol", m.tol);
    i.get("max_restarts", m.max_restarts);
    i.get("block", m.block);
  });

  r.object("erd", [&](Reader& e) {
    auto& x = c.erd;
    e.get_pair("band_hz", x.band.lo_hz, x.band.hi_hz);
    e.get("smooth_ms", x.smooth_ms);
    e.get_pair("reference_window_s", x.reference.start_s, x.reference.end_s);
    e.get_pair("movement_window_s", x.movement.start_s, x.movement.end_s);
    e.get_pair("post_window_s", x.post.start_s, x.post.end_s);
    e.get("score_threshold", x.score_threshold);
    e.get("k_min", x.k_min);
    e.get("k_max", x.k_max);
  });

  r.object("features", [&](Reader& f) {
    auto& x = c.features;
    f.get("t_start_ms", x.grid.t_start_ms);
    f.get("t_end_ms", x.grid.t_end_ms);
    f.get("window_ms", x.grid.window_ms);
    f.get("step_ms", x.grid.step_ms);
    if (auto v = f.find("bands_hz")) {
      if (!v->is_array()) Reader::fail(f.at("bands_hz"), "expected an array of [lo, hi] pairs");
      x.grid.bands.clear();
      for (std::size_t i = 0; i < v->size(); ++i) {
        const auto& b = (*v)[i];
        if (!b.is_array() || b.size() != 2 || !b[0].is_number() || !b[1].is_number()) {
          Reader::fail(f.at("bands_hz") + "/" + std::to_string(i), "expected [number, number]");
        }
        x.grid.bands.push_back({b[0].get<double>(), b[1].get<double>()});
      }
    }
    f.get("nfft", x.grid.nfft);
    f.get("k", x.k);
    f.get("nested_selection", x.nested_selection);
    f.get("log_power", x.log_power);
  });

  r.object("classify", [&](Reader& k) {
    auto& x = c.classify;
    k.get("shrinkage", x.shrinkage);
    k.get("outlier_filter", x.outlier_filter);
    k.get("outlier_quantile", x.outlier_quantile);
    k.object("mlp", [&](Reader& m) {
      m.get("hidden", x.mlp.hidden);
      m.get("learning_rate", x.mlp.learning_rate);
      m.get("epochs", x.mlp.epochs);
      m.get("patience", x.mlp.patience);
      m.get("min_improvement", x.mlp.min_improvement);
      m.get("train_fraction", x.mlp.train_fraction);
    });
  });
  r.finish();

  // semantic checks that are cheap to do up front
  try {
    validate(c.synth);
    validate(c.features.grid);
  } catch (const Error& e) {
    throw Error(ErrorKind::ConfigError, e.what());
  }
  if (c.erd.k_min < 1 || c.erd.k_min > c.erd.k_max) Reader::fail("/erd/k_min", "need 1 <= k_min <= k_max");
  if (c.features.k == 0) Reader::fail("/features/k", "must be positive");
  if (c.classify.shrinkage < 0.0 || c.classify.shrinkage > 1.0) Reader::fail("/classify/shrinkage", "must lie in [0, 1]");
  if (!(c.ica.retain > 0.0)) Reader::fail("/ica/retain", "must be positive");
  return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorKind::ConfigError, "cannot open config " + path.string());
  json j;
  try {
    j = json::parse(f);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::ConfigError, path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

std::string sha256_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::Io, "cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return sha256_hex(ss.str());
}

std::string config_hash(const PipelineConfig& cfg) {
  json j = json::parse(to_json(cfg).dump()); // std::map-backed: keys sorted
  j.erase("dataset_dir");
  j.erase("output_dir");
  return sha256_hex(j.dump());
}

std::uint64_t derive_stage_seed(std::uint64_t seed, const std::string& label) {
  const std::string digest = sha256_hex(std::to_string(seed) + ":" + label);
  return std::stoull(digest.substr(0, 16), nullptr, 16);
}

} // namespace bcihand
