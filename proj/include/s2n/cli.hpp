#pragma once

// Subcommands of the s2n tool. Each returns a process exit code and writes
// its diagnostics to the given streams, so tests can drive them in-process.
//
// Exit codes: 0 success, 1 runtime or data error, 2 invalid config or usage,
// 3 training aborted on a NaN loss.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "s2n/checkpoint.hpp"
#include "s2n/config.hpp"
#include "s2n/dataio.hpp"
#include "s2n/dsp.hpp"
#include "s2n/gradcheck.hpp"
#include "s2n/trainer.hpp"
#include "s2n/wav.hpp"

namespace s2n {

enum class LogLevel { quiet = 0, info = 1, debug = 2 };

/// Reads S2N_LOG (quiet, info, debug); anything else means info.
inline LogLevel log_level_from_env() {
  const char* v = std::getenv("S2N_LOG");
  if (v == nullptr) return LogLevel::info;
  const std::string s(v);
  if (s == "quiet") return LogLevel::quiet;
  if (s == "debug") return LogLevel::debug;
  return LogLevel::info;
}

struct Console {
  std::ostream& out;
  std::ostream& err;
  LogLevel level = LogLevel::info;

  template <class... A>
  void log(LogLevel at, const A&... parts) const {
    if (static_cast<int>(at) > static_cast<int>(level)) return;
    ((err << parts), ...);
    err << '\n';
  }
};

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  std::string config_path;
  ConfigOverrides overrides;
  bool resume = false;                    // continue from the newest checkpoint in the output dir
  std::optional<std::string> resume_from;  // continue from this checkpoint
  std::uint64_t stop_after = 0;           // end early after this many iterations (0 = run to the end)
};

inline std::string checkpoint_name(std::uint64_t iteration) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "iter_%08llu.ckpt", static_cast<unsigned long long>(iteration));
  return buf;
}

/// Newest checkpoint under dir/checkpoints, if any.
inline std::optional<std::string> latest_checkpoint(const std::string& dir) {
  const fs::path sub = fs::path(dir) / "checkpoints";
  if (!fs::is_directory(sub)) return std::nullopt;
  std::optional<std::string> best;
  for (const auto& e : fs::directory_iterator(sub)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("iter_", 0) != 0 || e.path().extension() != ".ckpt") continue;
    if (!best || name > fs::path(*best).filename().string()) best = e.path().string();
  }
  return best;
}

namespace detail {

/// Keeps comment lines, the column header and data rows 1..k; fails if any of
/// those rows is missing.
inline std::string truncate_table(const std::string& path, std::uint64_t k, bool rows_start_at_one) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open for resume");
  std::string kept, line;
  std::uint64_t expect = rows_start_at_one ? 1 : 0;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      kept += line + "\n";
      continue;
    }
    if (!header) {
      header = true;
      kept += line + "\n";
      continue;
    }
    const std::uint64_t it = std::stoull(line.substr(0, line.find('\t')));
    if (it > k) break;
    if (rows_start_at_one && it != expect) {
      throw std::runtime_error(path + ": expected row for iteration " + std::to_string(expect) + ", found " +
                               std::to_string(it));
    }
    ++expect;
    kept += line + "\n";
  }
  if (rows_start_at_one && expect != k + 1) {
    throw std::runtime_error(path + ": holds " + std::to_string(expect - 1) + " rows but the checkpoint is at " +
                             std::to_string(k));
  }
  return kept;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  out << text;
  if (!out) throw std::runtime_error(path + ": write failed");
}

inline std::string eval_row(std::uint64_t iteration, double cycle_l1) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%llu\t%.9g\n", static_cast<unsigned long long>(iteration), cycle_l1);
  return buf;
}

}  // namespace detail

/// Trains per the config. Writes into output_dir: config.yaml (resolved),
/// trace.tsv (one row per iteration), eval.tsv (held-out cycle L1 every
/// eval_interval), checkpoints/iter_N.ckpt every checkpoint_interval and at the end.
inline int cmd_train(const TrainOptions& opt, const Console& con) {
  RunConfig cfg;
  try {
    cfg = opt.config_path.empty() ? RunConfig::defaults(opt.overrides.preset.value_or(Preset::desk))
                                  : load_run_config(opt.config_path, opt.overrides.preset);
    apply_overrides(cfg, opt.overrides);
  } catch (const ConfigError& e) {
    con.err << "error: " << e.what() << "\n";
    return 2;
  }
  const std::string config_text = emit_run_config(cfg);
  // Checkpoints carry the config without its location, so a run directory can
  // be moved and identical runs write identical checkpoints.
  RunConfig located = cfg;
  located.output_dir = ".";
  const std::string ckpt_config_text = emit_run_config(located);
  const fs::path dir(cfg.output_dir);
  const std::string trace_path = (dir / "trace.tsv").string();
  const std::string eval_path = (dir / "eval.tsv").string();

  try {
    fs::create_directories(dir / "checkpoints");
    detail::write_text((dir / "config.yaml").string(), config_text);

    DomainCorpus cx, cy;
    if (cfg.manifest) {
      std::tie(cx, cy) = load_corpora(*cfg.manifest);
    } else {
      con.log(LogLevel::info, "generating toy domains (seed ", cfg.toy.seed, ")");
      ToyCorpora toy = make_toy_domains(cfg.toy);
      cx = std::move(toy.x);
      cy = std::move(toy.y);
    }
    for (const DomainCorpus* c : {&cx, &cy}) {
      if (c->heldout.empty()) {
        throw DataError(std::string("domain ") + domain_tag(c->domain) + ": held-out split is empty");
      }
    }

    retain_tensor_memory();
    CycleGanState state(cfg.generator, cfg.discriminator, cfg.training.seed);
    std::optional<std::string> resume = opt.resume_from;
    if (!resume && opt.resume) {
      resume = latest_checkpoint(cfg.output_dir);
      if (!resume) con.log(LogLevel::info, "no checkpoint in ", cfg.output_dir, ", starting fresh");
    }
    if (resume) {
      const CheckpointData ck = read_checkpoint(*resume);
      if (ck.config_text != ckpt_config_text) {
        con.err << "error: " << *resume << " was written with a different config\n";
        return 2;
      }
      restore_checkpoint(state, ck);
      detail::write_text(trace_path, detail::truncate_table(trace_path, state.iteration, true));
      detail::write_text(eval_path, detail::truncate_table(eval_path, state.iteration, false));
      con.log(LogLevel::info, "resumed from ", *resume, " at iteration ", state.iteration);
    } else {
      std::ostringstream header;
      write_trace_header(header, cfg.training);
      detail::write_text(trace_path, header.str());
      detail::write_text(eval_path, "iteration\theldout_cycle_l1\n" +
                                        detail::eval_row(0, heldout_cycle_l1(state, cx, cy)));
    }

    std::ofstream trace(trace_path, std::ios::binary | std::ios::app);
    std::ofstream eval(eval_path, std::ios::binary | std::ios::app);
    if (!trace || !eval) throw std::runtime_error(cfg.output_dir + ": cannot append to trace files");
    const auto t0 = std::chrono::steady_clock::now();
    const std::uint64_t first = state.iteration;

    auto save = [&](const CycleGanState& s) {
      trace.flush();
      eval.flush();
      const std::string path = (dir / "checkpoints" / checkpoint_name(s.iteration)).string();
      write_checkpoint(path, make_checkpoint(s, cx.stats, cy.stats, ckpt_config_text));
      con.log(LogLevel::debug, "wrote ", path);
    };

    TrainCallbacks cb;
    cb.stop_after = opt.stop_after;
    cb.checkpoint_interval = cfg.checkpoint_interval;
    cb.on_checkpoint = save;
    cb.on_step = [&](std::uint64_t it, const LossReport& r) {
      trace << trace_row(it, r, cfg.training);
      if (cfg.eval_interval != 0 && it % cfg.eval_interval == 0) {
        const double l1 = heldout_cycle_l1(state, cx, cy);
        eval << detail::eval_row(it, l1);
        con.log(LogLevel::info, "iteration ", it, ": total ", r.total, ", cycle ", r.cycle,
                ", held-out cycle L1 ", l1);
      }
      if (con.level == LogLevel::debug && it % 100 == 0) {
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        con.log(LogLevel::debug, "iteration ", it, " (", secs / static_cast<double>(it - first), " s/iter)");
      }
    };
    try {
      train(state, cx, cy, cfg.training, cb);
    } catch (const TrainingError& e) {
      trace.flush();
      con.err << "error: training aborted: " << e.what() << "\n";
      return 3;
    }
    if (cfg.checkpoint_interval == 0 || state.iteration % cfg.checkpoint_interval != 0) save(state);
    trace.flush();
    if (!trace) throw std::runtime_error(trace_path + ": write failed");
    con.log(LogLevel::info, "finished at iteration ", state.iteration);
    return 0;
  } catch (const ConfigError& e) {
    con.err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    con.err << "error: " << e.what() << "\n";
    return 1;
  }
}

// ---------------------------------------------------------------------------
// convert

enum class Direction { x2y, y2x };

inline Direction parse_direction(const std::string& s) {
  if (s == "x2y") return Direction::x2y;
  if (s == "y2x") return Direction::y2x;
  throw ConfigError("direction must be x2y or y2x, got '" + s + "'");
}

struct ConvertOptions {
  std::string checkpoint;
  std::string input;
  std::string output;
  Direction direction = Direction::x2y;
};

/// Generator and normalization stats for one direction of a checkpoint.
struct Converter {
  Generator<float> generator;
  NormStats source, target;

  Waveform operator()(const Waveform& w) const { return convert_waveform(generator, w, source, target); }
};

inline Converter load_converter(const CheckpointData& ck, Direction d) {
  const RunConfig cfg = parse_run_config(ck.config_text, std::nullopt, "checkpoint config");
  Converter c{Generator<float>(cfg.generator, 0), {}, {}};
  restore_generator(c.generator, ck, d == Direction::x2y ? "g_xy" : "g_yx");
  c.source = checkpoint_stats(ck, d == Direction::x2y ? Domain::X : Domain::Y);
  c.target = checkpoint_stats(ck, d == Direction::x2y ? Domain::Y : Domain::X);
  return c;
}

/// Inputs of any length are right-padded to the generator's length divisor
/// and trimmed back after conversion.
inline int cmd_convert(const ConvertOptions& opt, const Console& con) {
  try {
    const Converter conv = load_converter(read_checkpoint(opt.checkpoint), opt.direction);
    const Waveform in = read_wav(opt.input);
    const std::size_t clipped = write_wav(conv(in), opt.output);
    con.out << "wrote " << opt.output << " (" << in.size() << " samples, " << in.sample_rate << " Hz, "
            << clipped << " clipped)\n";
    return 0;
  } catch (const ConfigError& e) {
    con.err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    con.err << "error: " << e.what() << "\n";
    return 1;
  }
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateOptions {
  std::vector<std::string> set_a;
  std::vector<std::string> set_b;
  std::size_t k_bins = 1000;
  std::string output_dir = ".";  // receives ms_a.tsv and ms_b.tsv
};

struct EvaluateResult {
  ModulationSpectrum a, b;
  double distance = 0.0;
};

/// Average modulation spectrum of each set and their distance. Unreadable or
/// too-short files are collected into `errors` instead of throwing.
inline std::optional<EvaluateResult> evaluate_sets(const std::vector<std::string>& a,
                                                   const std::vector<std::string>& b, std::size_t k,
                                                   std::vector<std::string>& errors) {
  auto average = [&](const std::vector<std::string>& paths, const char* which) {
    std::vector<ModulationSpectrum> all;
    if (paths.empty()) errors.push_back(std::string("set ") + which + ": no files");
    for (const auto& p : paths) {
      try {
        const FeatureSequence seq = extract_mel_cepstrum(read_wav(p));
        if (seq.too_short) throw std::runtime_error("shorter than one analysis frame");
        all.push_back(modulation_spectrum(seq));
      } catch (const std::exception& e) {
        const std::string what = e.what();
        errors.push_back(what.rfind(p, 0) == 0 ? what : p + ": " + what);
      }
    }
    return all;
  };
  const auto ma = average(a, "A");
  const auto mb = average(b, "B");
  if (!errors.empty()) return std::nullopt;
  EvaluateResult r{average_modulation_spectrum(ma), average_modulation_spectrum(mb), 0.0};
  r.distance = ms_distance(r.a, r.b, k);
  return r;
}

inline int cmd_evaluate(const EvaluateOptions& opt, const Console& con) {
  if (opt.k_bins == 0) {
    con.err << "error: --k-bins must be positive\n";
    return 2;
  }
  std::vector<std::string> errors;
  const auto r = evaluate_sets(opt.set_a, opt.set_b, opt.k_bins, errors);
  if (!r) {
    for (const auto& e : errors) con.err << "error: " << e << "\n";
    return 1;
  }
  try {
    fs::create_directories(opt.output_dir);
    for (const auto& [name, ms] : {std::pair{"ms_a.tsv", &r->a}, std::pair{"ms_b.tsv", &r->b}}) {
      std::ostringstream table;
      write_modulation_table(table, *ms, opt.k_bins);
      detail::write_text((fs::path(opt.output_dir) / name).string(), table.str());
    }
  } catch (const std::exception& e) {
    con.err << "error: " << e.what() << "\n";
    return 1;
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", r->distance);
  con.out << "files_a\t" << opt.set_a.size() << "\nfiles_b\t" << opt.set_b.size() << "\nk_bins\t"
          << opt.k_bins << "\nms_distance\t" << buf << "\n";
  return 0;
}

/// Paths of one domain's rows in a manifest, resolved like load_corpus does.
inline std::vector<std::string> manifest_paths(const std::string& manifest, Domain d) {
  const fs::path base = fs::path(manifest).parent_path();
  std::vector<std::string> out;
  for (const auto& r : read_manifest(manifest)) {
    if (r.domain != d) continue;
    fs::path p(r.path);
    out.push_back((p.is_relative() ? base / p : p).string());
  }
  return out;
}

// ---------------------------------------------------------------------------
// gradcheck

inline constexpr double kGradCheckTolerance = 1e-4;

/// Runs every op of the finite-difference suite on `cases` random draws.
inline int cmd_gradcheck(const Console& con, std::size_t cases = 100) {
  bool ok = true;
  for (const auto& c : standard_grad_check_suite()) {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < cases; ++seed) {
      Rng rng(seed);
      worst = std::max(worst, c.run(rng));
    }
    const bool pass = worst < kGradCheckTolerance;
    ok = ok && pass;
    char buf[128];
    std::snprintf(buf, sizeof buf, "%-22s max_rel_error %.3e  %s\n", c.name.c_str(), worst, pass ? "ok" : "FAIL");
    con.out << buf;
  }
  return ok ? 0 : 1;
}

// ---------------------------------------------------------------------------
// gentoy

/// Writes X/ and Y/ WAV files, manifest.tsv (relative paths) and gap.tsv, the
/// domain gap measured at generation time.
inline int cmd_gentoy(const ToyDomainSpec& spec, const std::string& out_dir, const Console& con) {
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    con.err << "error: " << e.what() << "\n";
    return 2;
  }
  const ToyCorpora toy = make_toy_domains(spec);
  std::vector<ManifestEntry> rows;
  std::size_t failures = 0;
  auto emit = [&](const DomainCorpus& c) {
    const std::string tag(1, domain_tag(c.domain));
    std::error_code ec;
    fs::create_directories(fs::path(out_dir) / tag, ec);
    std::size_t n = 0;
    for (const auto* split : {&c.train, &c.heldout}) {
      for (const auto& w : *split) {
        char name[32];
        std::snprintf(name, sizeof name, "%s/%04zu.wav", tag.c_str(), n++);
        try {
          write_wav(w, (fs::path(out_dir) / name).string());
          rows.push_back({name, c.domain, split == &c.heldout});
        } catch (const std::exception& e) {
          con.err << "error: " << e.what() << "\n";
          ++failures;
        }
      }
    }
  };
  emit(toy.x);
  emit(toy.y);
  try {
    std::ostringstream manifest;
    write_manifest(manifest, rows);
    detail::write_text((fs::path(out_dir) / "manifest.tsv").string(), manifest.str());
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "ms_distance\t%.17g\nms_distance_heldout\t%.17g\ndetail_band_x\t%.17g\n"
                  "detail_band_y\t%.17g\ndetail_lo_bin\t%zu\ndetail_hi_bin\t%zu\n",
                  toy.gap.ms_distance, toy.gap.ms_distance_heldout, toy.gap.detail_band_x, toy.gap.detail_band_y,
                  toy.gap.detail_lo, toy.gap.detail_hi);
    detail::write_text((fs::path(out_dir) / "gap.tsv").string(), buf);
  } catch (const std::exception& e) {
    con.err << "error: " << e.what() << "\n";
    ++failures;
  }
  if (failures != 0) return 1;
  con.out << "wrote " << rows.size() << " files to " << out_dir << " (ms_distance " << toy.gap.ms_distance << ")\n";
  return 0;
}

}  // namespace s2n
