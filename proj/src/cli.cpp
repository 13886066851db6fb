#include "fxattn/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "fxattn/bench.hpp"
#include "fxattn/costmodel.hpp"
#include "fxattn/error.hpp"
#include "fxattn/log.hpp"
#include "fxattn/model.hpp"

namespace fxattn::cli {

namespace {

// Flag values that parsed as strings but failed semantic validation.
struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct Options {
  std::string out = ".";
  std::string weights;
  std::string data;
  std::string fmt = "fixed<20,10>";
  std::string rf_list = "1,2,4";
  std::string rf_single = "1";
  std::string device = "vu13p";
  std::string int_bits = "6-10";
  std::string frac_bits = "0-16";
  std::string rounding = "RND_CONV";
  std::string overflow = "SAT";
  std::size_t n = 10000;
  std::uint64_t seed = 1;
  std::size_t feature = kSd0;
  std::size_t jobs = 1;
};

std::filesystem::path output_file(const Options& o, const std::string& name) {
  std::filesystem::create_directories(o.out);
  return std::filesystem::path(o.out) / name;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ParseError(path.string(), 0, "cannot open for writing");
  f << text;
  if (!f) throw ParseError(path.string(), 0, "write failed");
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

template <class F>
auto usage_checked(F&& f) {
  try {
    return f();
  } catch (const UsageError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

ForwardMode parse_mode(const std::string& s) {
  if (s == "float") return ForwardMode::floating();
  return usage_checked([&] { return ForwardMode::fixed_point(FxFormat::parse(s)); });
}

FxFormat parse_format(const std::string& s) {
  return usage_checked([&] { return FxFormat::parse(s); });
}

std::vector<std::uint64_t> parse_rf_list(const std::string& s) {
  std::vector<std::uint64_t> out;
  for (auto v : usage_checked([&] { return parse_int_list(s); })) {
    if (v < 1) throw UsageError("reuse factor must be >= 1");
    out.push_back(static_cast<std::uint64_t>(v));
  }
  return out;
}

std::vector<int> parse_bits(const std::string& s) {
  std::vector<int> out;
  for (auto v : usage_checked([&] { return parse_int_list(s); })) out.push_back(static_cast<int>(v));
  return out;
}

ModelConfig config_or_default(const Options& o) {
  if (o.weights.empty()) return ModelConfig{};
  return load_weights(o.weights).config;
}

DeviceProfile device_of(const Options& o) {
  if (o.device == "vu13p") return DeviceProfile::vu13p();
  if (o.device.rfind("custom:", 0) != 0) throw UsageError("--device must be vu13p or custom:<file>");
  return DeviceProfile::from_name(o.device);
}

int run_gen_data(const Options& o, std::ostream& out) {
  if (o.n == 0) throw UsageError("--n must be >= 1");
  const Dataset ds = generate_synthetic(o.n, o.seed);
  const auto path = output_file(o, "dataset.csv");
  save_csv(path.string(), ds);
  const auto c = ds.class_counts();
  out << "gen-data: " << ds.samples.size() << " jets (b=" << c[0] << " c=" << c[1] << " light=" << c[2]
      << ", seed " << o.seed << ") -> " << path.string() << "\n";
  return kExitOk;
}

int run_make_weights(const Options& o, std::ostream& out) {
  const ModelConfig cfg;
  if (o.feature >= cfg.num_features) throw UsageError("--feature must be < 6");
  const auto w = make_analytic_weights(cfg, o.feature);
  const auto path = output_file(o, "weights.json");
  save_weights(path.string(), cfg, w);
  const std::size_t params = param_count(cfg);
  if (params != 9135) {
    log::info("trainable parameters " + std::to_string(params) + " differ from the 9135 of the reference Keras model");
  }
  out << "make-weights: analytic weights on feature " << o.feature << ", " << params << " parameters -> "
      << path.string() << "\n";
  return kExitOk;
}

int run_infer(const Options& o, std::ostream& out) {
  const ForwardMode mode = parse_mode(o.fmt);
  const auto model = load_weights(o.weights);
  const Dataset ds = load_csv(o.data);
  const InferenceModel engine(model.config, model.weights, mode);
  const auto probs = predict(engine, ds, o.jobs);

  std::string csv = "jet_id,label,p_b,p_c,p_light\n";
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    csv += std::to_string(ds.samples[i].jet_id) + "," + flavor_name(ds.samples[i].label);
    for (double p : probs[i]) csv += "," + fixed(p, 6);
    csv += "\n";
  }
  const auto path = output_file(o, "predictions.csv");
  write_text(path, csv);

  out << "infer: " << ds.samples.size() << " jets, mode " << mode.to_string();
  const auto c = ds.class_counts();
  if (c[0] && c[1] && c[2]) {
    const auto auc = evaluate_auc(probs, ds);
    out << ", AUC b=" << fixed(auc.b, 4) << " c=" << fixed(auc.c, 4) << " light=" << fixed(auc.light, 4)
        << " macro=" << fixed(auc.macro, 4);
  }
  out << " -> " << path.string() << "\n";
  return kExitOk;
}

int run_sweep_precision(const Options& o, std::ostream& out) {
  const auto ints = parse_bits(o.int_bits);
  const auto fracs = parse_bits(o.frac_bits);
  const Rounding rounding = o.rounding == "TRN" ? Rounding::TruncateTowardNegInf : Rounding::RoundNearestEven;
  const Overflow overflow = o.overflow == "WRAP" ? Overflow::Wrap : Overflow::Saturate;
  for (int i : ints) {
    for (int f : fracs) usage_checked([&] { return FxFormat(i, f); });
  }

  const auto model = load_weights(o.weights);
  const Dataset ds = load_csv(o.data);
  log::info("precision sweep over " + std::to_string(ints.size() * fracs.size()) + " formats, " +
            std::to_string(ds.samples.size()) + " jets");
  const auto sweep =
      sweep_precision(model.config, model.weights, ds, ints, fracs, overflow, rounding, o.jobs);

  const auto path = output_file(o, "precision_sweep.csv");
  write_text(path, sweep.to_csv());
  const auto auc_json = [](const AucSummary& a) {
    return nlohmann::ordered_json{{"b", a.b}, {"c", a.c}, {"light", a.light}, {"macro", a.macro}};
  };
  const nlohmann::ordered_json meta = {{"rounding", o.rounding},
                                       {"overflow", o.overflow},
                                       {"jets", ds.samples.size()},
                                       {"float_auc", auc_json(sweep.float_auc)}};
  write_text(output_file(o, "precision_sweep.json"), meta.dump(2) + "\n");

  const PrecisionPoint* best = nullptr;
  for (const auto& p : sweep.points) {
    if (!best || p.auc_ratio > best->auc_ratio) best = &p;
  }
  out << "sweep-precision: " << sweep.points.size() << " formats (" << o.rounding << "," << o.overflow
      << "), float macro AUC " << fixed(sweep.float_auc.macro, 4);
  if (best) out << ", best ratio " << fixed(best->auc_ratio, 4) << " at (" << best->int_bits << "," << best->frac_bits << ")";
  out << " -> " << path.string() << "\n";
  return kExitOk;
}

int run_sweep_reuse(const Options& o, std::ostream& out) {
  const FxFormat fmt = parse_format(o.fmt);
  const auto rfs = parse_rf_list(o.rf_list);
  const DeviceProfile dev = device_of(o);
  const ModelConfig cfg = config_or_default(o);
  const auto sweep = sweep_reuse(cfg, rfs, fmt, dev);

  const auto path = output_file(o, "reuse_sweep.csv");
  write_text(path, sweep.to_csv());
  out << "sweep-reuse: " << sweep.points.size() << " reuse factors at " << fmt.to_string() << " on " << dev.name
      << " -> " << path.string() << "\n";
  for (const auto& p : sweep.points) {
    out << "  rf=" << p.rf << "  DSP " << p.resources.total.dsp << "  II " << p.latency.ii_cycles << " cycles ("
        << fixed(p.latency.ii_ns, 2) << " ns)  latency " << fixed(p.latency.latency_us, 3) << " us";
    const double ref = reference_latency_us(p.rf);
    if (ref > 0.0) {
      out << "  [reference " << fixed(ref, 3) << " us, " << fixed(100.0 * (p.latency.latency_us - ref) / ref, 1)
          << "%]";
    }
    out << "\n";
  }
  return kExitOk;
}

int run_report_resources(const Options& o, std::ostream& out) {
  const FxFormat fmt = parse_format(o.fmt);
  const auto rfs = parse_rf_list(o.rf_single);
  if (rfs.size() != 1) throw UsageError("report-resources takes a single --rf value");
  const DeviceProfile dev = device_of(o);
  const ModelConfig cfg = config_or_default(o);
  const auto rep = estimate_resources(cfg, fmt, ReuseFactor(rfs[0]), dev);

  const auto path = output_file(o, "resources.csv");
  write_text(path, rep.to_csv());
  out << "report-resources: rf=" << rfs[0] << " " << fmt.to_string() << "  " << rep.summary(dev) << " -> "
      << path.string() << "\n";
  return kExitOk;
}

// Help text of the subcommand named on the command line, else the top level.
std::string usage_of(const CLI::App& app) {
  const auto chosen = app.get_subcommands();
  return chosen.empty() ? app.help() : chosen.front()->help("fxattn");
}

}  // namespace

std::vector<std::int64_t> parse_int_list(const std::string& text) {
  std::vector<std::int64_t> out;
  std::stringstream ss(text);
  std::string item;
  const auto to_int = [&](const std::string& s) {
    std::size_t used = 0;
    long long v = 0;
    try {
      v = std::stoll(s, &used);
    } catch (const std::exception&) {
      used = std::string::npos;
    }
    if (used != s.size()) throw std::invalid_argument("bad integer list '" + text + "'");
    return static_cast<std::int64_t>(v);
  };
  while (std::getline(ss, item, ',')) {
    const auto dash = item.find('-', 1);
    if (dash == std::string::npos) {
      out.push_back(to_int(item));
      continue;
    }
    const auto lo = to_int(item.substr(0, dash));
    const auto hi = to_int(item.substr(dash + 1));
    if (hi < lo) throw std::invalid_argument("bad range '" + item + "'");
    for (auto v = lo; v <= hi; ++v) out.push_back(v);
  }
  if (out.empty()) throw std::invalid_argument("empty integer list");
  return out;
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Fixed-point streaming transformer emulator for jet flavor tagging", "fxattn"};
  app.require_subcommand(1);
  Options o;

  const auto add_out = [&](CLI::App* s) { s->add_option("--out", o.out, "Output directory")->capture_default_str(); };
  const auto add_jobs = [&](CLI::App* s) {
    s->add_option("--jobs", o.jobs, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
  };
  const auto add_device = [&](CLI::App* s) {
    s->add_option("--device", o.device, "Device profile: vu13p or custom:<file>")->capture_default_str();
  };

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic jet dataset (dataset.csv)");
  gen->add_option("--n", o.n, "Number of jets")->capture_default_str();
  gen->add_option("--seed", o.seed, "Generator seed")->capture_default_str();
  add_out(gen);

  auto* mk = app.add_subcommand("make-weights", "Write handcrafted analytic weights (weights.json)");
  mk->add_option("--feature", o.feature, "Track feature column driving the b logit (2 = S(d0))")
      ->capture_default_str();
  add_out(mk);

  auto* inf = app.add_subcommand("infer", "Run the model over a dataset (predictions.csv)");
  inf->add_option("--weights", o.weights, "Weight file")->required();
  inf->add_option("--data", o.data, "Dataset CSV")->required();
  inf->add_option("--fmt", o.fmt, "Number format: fixed<W,I>[,Q,O] or float")->capture_default_str();
  add_jobs(inf);
  add_out(inf);

  auto* sp = app.add_subcommand("sweep-precision", "AUC ratio over integer x fractional bits (precision_sweep.csv)");
  sp->add_option("--weights", o.weights, "Weight file")->required();
  sp->add_option("--data", o.data, "Dataset CSV")->required();
  sp->add_option("--int", o.int_bits, "Integer bits, list or range")->capture_default_str();
  sp->add_option("--frac", o.frac_bits, "Fractional bits, list or range")->capture_default_str();
  sp->add_option("--rounding", o.rounding, "Rounding mode")
      ->capture_default_str()
      ->check(CLI::IsMember({"RND_CONV", "TRN"}));
  sp->add_option("--overflow", o.overflow, "Overflow mode")
      ->capture_default_str()
      ->check(CLI::IsMember({"SAT", "WRAP"}));
  add_jobs(sp);
  add_out(sp);

  auto* sr = app.add_subcommand("sweep-reuse", "Resources and latency over reuse factors (reuse_sweep.csv)");
  sr->add_option("--rf", o.rf_list, "Reuse factors, list or range")->capture_default_str();
  sr->add_option("--fmt", o.fmt, "Number format fixed<W,I>")->capture_default_str();
  sr->add_option("--weights", o.weights, "Weight file supplying the model config (default: built-in)");
  add_device(sr);
  add_out(sr);

  auto* rr = app.add_subcommand("report-resources", "Per-layer resource estimate (resources.csv)");
  rr->add_option("--rf", o.rf_single, "Reuse factor")->capture_default_str();
  rr->add_option("--fmt", o.fmt, "Number format fixed<W,I>")->capture_default_str();
  rr->add_option("--weights", o.weights, "Weight file supplying the model config (default: built-in)");
  add_device(rr);
  add_out(rr);

  std::vector<std::string> argv_store{"fxattn"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << usage_of(app);
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return run_gen_data(o, out);
    if (mk->parsed()) return run_make_weights(o, out);
    if (inf->parsed()) return run_infer(o, out);
    if (sp->parsed()) return run_sweep_precision(o, out);
    if (sr->parsed()) return run_sweep_reuse(o, out);
    if (rr->parsed()) return run_report_resources(o, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n\n" << usage_of(app);
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

int dispatch(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dispatch(args, std::cout, std::cerr);
}

}  // namespace fxattn::cli
