#pragma once

#include <atomic>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <ostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "binloc/crn.hpp"
#include "binloc/dataset.hpp"
#include "binloc/earnoise.hpp"
#include "binloc/eval.hpp"
#include "binloc/listening.hpp"
#include "binloc/service.hpp"
#include "binloc/srp.hpp"
#include "binloc/train.hpp"

namespace binloc {

namespace detail {

inline CrnConfig named_model(const std::string& name) {
  if (name == "desk") return CrnConfig::desk();
  if (name == "paper") return CrnConfig::paper();
  if (name == "tiny") return CrnConfig::tiny(51);
  throw Error("unknown model config '" + name + "' (desk, paper, tiny)");
}

inline std::vector<double> named_edges(const std::string& name) {
  if (name == "default") return default_bucket_edges();
  if (name == "listening") return listening_bucket_edges();
  std::vector<double> edges;
  std::istringstream s(name);
  for (std::string tok; std::getline(s, tok, ',');) edges.push_back(std::stod(tok));
  return edges;
}

inline EarFilter default_ear_filter(const std::string& profile_path, int sample_rate, std::size_t taps) {
  const auto profile = profile_path.empty() ? default_noise_profile() : load_noise_profile(profile_path);
  return design_ear_filter(profile, sample_rate, taps);
}

inline std::atomic<ListeningService*> g_service{nullptr};

}  // namespace detail

/// Entry point for the `binloc` tool. Exit codes: 0 success, 1 usage error, 2 runtime error.
inline int cli_main(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Binaural azimuth localisation toolkit"};
  app.set_config("--config", "", "INI/TOML file with option defaults (sections per subcommand)");
  app.fallthrough();
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  bool deterministic = false;
  app.add_option("--seed", seed, "Master seed")->capture_default_str();
  app.add_flag("--deterministic", deterministic, "Single-threaded, bit-reproducible execution");

  // synth
  DatasetConfig dcfg;
  std::string synth_out = "dataset";
  std::vector<double> t60s{0.0, 0.46};
  double drr = 3.0;
  bool no_ear_noise = false;
  auto* synth = app.add_subcommand("synth", "Generate a binaural dataset (features + manifest)");
  synth->add_option("--out", synth_out, "Output directory")->capture_default_str();
  synth->add_option("--count", dcfg.count, "Number of records")->capture_default_str();
  synth->add_option("--brir-manifest", dcfg.brir_manifest, "Measured BRIR manifest (default: synthetic head)");
  synth->add_option("--t60", t60s, "Synthetic rooms, T60 in seconds (0 = anechoic)")->capture_default_str();
  synth->add_option("--drr", drr, "Synthetic direct-to-reverberant ratio, dB")->capture_default_str();
  synth->add_option("--speech-dir", dcfg.speech_dir, "Directory of mono speech WAVs (default: noise-burst surrogate)");
  synth->add_option("--snr-min", dcfg.snr_min_db, "Lowest SNR, dB")->capture_default_str();
  synth->add_option("--snr-max", dcfg.snr_max_db, "Highest SNR, dB")->capture_default_str();
  synth->add_option("--snr-values", dcfg.snr_values_db, "Discrete SNRs, dB (overrides the range)");
  synth->add_option("--azimuth-step", dcfg.azimuth_step_deg, "Azimuth grid step (0 = continuous)")->capture_default_str();
  synth->add_option("--duration", dcfg.duration_s, "Utterance length, s")->capture_default_str();
  synth->add_option("--noise-profile", dcfg.noise_profile, "Ear-noise profile table (default: built in)");
  synth->add_flag("--no-ear-noise", no_ear_noise, "Skip the ear-noise chain");
  synth->add_flag("--write-audio", dcfg.write_audio, "Also write the noisy mixtures as WAV");
  synth->add_option("--noise-bank", dcfg.noise_bank_s, "Isotropic noise bank length per room, s")->capture_default_str();
  synth->add_option("--threads", dcfg.threads, "Worker threads (0 = all cores)")->capture_default_str();

  // train
  TrainConfig tcfg;
  std::string train_data, train_out = "model.ckpt", train_log, model_name = "desk";
  auto* train_cmd = app.add_subcommand("train", "Train the localisation network");
  train_cmd->add_option("--data", train_data, "Dataset manifest")->required();
  train_cmd->add_option("--out", train_out, "Checkpoint path (best validation loss)")->capture_default_str();
  train_cmd->add_option("--log", train_log, "Training log CSV");
  train_cmd->add_option("--model", model_name, "Model config: desk, paper, tiny")->capture_default_str();
  train_cmd->add_option("--epochs", tcfg.epochs, "Epochs")->capture_default_str();
  train_cmd->add_option("--lr", tcfg.learning_rate, "Adam learning rate")->capture_default_str();
  train_cmd->add_option("--lr-final", tcfg.lr_final_fraction, "Cosine-decay the rate to lr * this by the last epoch (1 = constant)")
      ->capture_default_str();
  train_cmd->add_option("--batch", tcfg.batch_size, "Mini-batch size")->capture_default_str();
  train_cmd->add_option("--clip", tcfg.clip_norm, "Global gradient-norm clip (<= 0 disables)")->capture_default_str();
  train_cmd->add_option("--threads", tcfg.threads, "Worker threads")->capture_default_str();

  // eval
  std::string eval_data, eval_ckpt, eval_out = "report", eval_split = "test", eval_edges = "default";
  std::vector<std::string> methods{"crn", "srp"};
  double constant_az = 0.0;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate estimators on a dataset split");
  eval_cmd->add_option("--data", eval_data, "Dataset manifest")->required();
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Network checkpoint (needed for crn)");
  eval_cmd->add_option("--method", methods, "crn, srp, oracle, constant (repeatable)")->capture_default_str();
  eval_cmd->add_option("--constant", constant_az, "Azimuth for the constant method")->capture_default_str();
  eval_cmd->add_option("--split", eval_split, "train, val or test")->capture_default_str();
  eval_cmd->add_option("--edges", eval_edges, "default, listening, or comma-separated dB edges")->capture_default_str();
  eval_cmd->add_option("--out", eval_out, "Report directory")->capture_default_str();

  // localize / probe
  std::string wav_path, loc_ckpt, profile_path;
  bool loc_no_ear = false;
  auto* localize = app.add_subcommand("localize", "Print network and SRP azimuths for a stereo WAV");
  localize->add_option("wav", wav_path, "Stereo WAV")->required();
  localize->add_option("--checkpoint", loc_ckpt, "Network checkpoint");
  localize->add_option("--noise-profile", profile_path, "Ear-noise profile table");
  localize->add_flag("--no-ear-noise", loc_no_ear, "Skip the ear-noise chain");

  double reference_az = 0.0;
  std::string transform = "none";
  auto* probe = app.add_subcommand("probe", "Interaural-cue preservation probe for processed audio");
  probe->add_option("wav", wav_path, "Processed stereo WAV")->required();
  probe->add_option("--reference", reference_az, "Azimuth of the unprocessed source")->required();
  probe->add_option("--checkpoint", loc_ckpt, "Network checkpoint")->required();
  probe->add_option("--noise-profile", profile_path, "Ear-noise profile table");
  probe->add_option("--transform", transform, "Apply before probing: none, swap, diotic")->capture_default_str();
  probe->add_flag("--no-ear-noise", loc_no_ear, "Skip the ear-noise chain");

  // serve
  SessionConfig scfg;
  std::string pool_path, results_log = "results.jsonl", ui_dir, host = "127.0.0.1";
  int port = 8080;
  auto* serve = app.add_subcommand("serve", "Run the listening-test HTTP service");
  serve->add_option("--pool", pool_path, "Stimulus pool manifest (built with --write-audio)")->required();
  serve->add_option("--log", results_log, "Append-only results log (JSONL)")->capture_default_str();
  serve->add_option("--participant", scfg.participant_id, "Participant id")->capture_default_str();
  serve->add_option("--trials", scfg.trial_count, "Trials per session")->capture_default_str();
  serve->add_option("--conditions", scfg.snr_conditions_db, "SNR conditions, dB")->capture_default_str();
  serve->add_option("--quantization", scfg.azimuth_quantization_deg, "Response grid, degrees")->capture_default_str();
  serve->add_option("--allow-replay", scfg.allow_replay, "Let participants replay stimuli")->capture_default_str();
  serve->add_option("--ui-dir", ui_dir, "Static files served at /");
  serve->add_option("--host", host, "Bind address")->capture_default_str();
  serve->add_option("--port", port, "Port")->capture_default_str();

  // compare
  std::string cmp_log, cmp_pool, cmp_ckpt, cmp_out = "listening_report";
  auto* compare = app.add_subcommand("compare", "Human vs network vs SRP errors from a results log");
  compare->add_option("--log", cmp_log, "Results log")->required();
  compare->add_option("--pool", cmp_pool, "Stimulus pool manifest")->required();
  compare->add_option("--checkpoint", cmp_ckpt, "Network checkpoint");
  compare->add_option("--out", cmp_out, "Report directory")->capture_default_str();

  // describe
  std::size_t frames = 247;
  bool config_template = false;
  auto* describe_cmd = app.add_subcommand("describe", "Print a model's layer shapes and parameter count");
  describe_cmd->add_option("--model", model_name, "Model config: desk, paper, tiny")->capture_default_str();
  describe_cmd->add_option("--frames", frames, "Input frames")->capture_default_str();
  describe_cmd->add_flag("--config-template", config_template, "Print every option default as a config file");

  if (argc <= 1) {
    err << app.help();
    return 1;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::Error& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) {
      dcfg.seed = seed;
      dcfg.ear_noise = !no_ear_noise;
      if (!dcfg.brir_manifest.empty()) dcfg.brir_source = "measured";
      dcfg.rooms.clear();
      for (double t : t60s) dcfg.rooms.push_back({t, drr});
      if (deterministic) dcfg.threads = 1;
      const auto m = build_dataset(dcfg, synth_out);
      out << "wrote " << m.records.size() << " records to " << (std::filesystem::path(synth_out) / "manifest.tsv").string()
          << " (config " << m.config_hash << ")\n";
    } else if (train_cmd->parsed()) {
      tcfg.seed = seed;
      tcfg.model = detail::named_model(model_name);
      if (deterministic) tcfg.threads = 1;
      const auto manifest = read_manifest(train_data);
      std::ofstream log;
      if (!train_log.empty()) {
        log.open(train_log);
        if (!log) throw Error("cannot write " + train_log);
        log << "epoch,train_loss,val_loss,wall_time\n" << std::setprecision(10);
      }
      const auto result = train(manifest, tcfg, [&](const EpochLog& e) {
        out << "epoch " << e.epoch << " train " << e.train_loss << " val " << e.val_loss << " (" << e.wall_time_s
            << " s)\n";
        if (log) log << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',' << e.wall_time_s << '\n' << std::flush;
      });
      save_checkpoint(result.best, train_out);
      out << "best epoch " << result.best_epoch << ", checkpoint " << train_out << "\n";
    } else if (eval_cmd->parsed()) {
      const auto manifest = read_manifest(eval_data);
      std::vector<NamedEstimator> ests;
      for (const auto& m : methods) {
        if (m == "crn") {
          if (eval_ckpt.empty()) throw Error("eval: method crn needs --checkpoint");
          ests.push_back({"crn", from_features(crn_estimator(load_checkpoint(eval_ckpt)))});
        } else if (m == "srp") {
          ests.push_back({"srp", from_features(srp_estimator())});
        } else if (m == "oracle") {
          ests.push_back({"oracle", oracle_estimator()});
        } else if (m == "constant") {
          ests.push_back({"constant", constant_estimator(constant_az)});
        } else {
          throw Error("eval: unknown method '" + m + "'");
        }
      }
      const auto report = evaluate(ests, manifest, detail::named_edges(eval_edges), parse_split(eval_split));
      emit_report(report, eval_out);
      out << format_report_table(report);
    } else if (localize->parsed() || probe->parsed()) {
      AudioBuffer audio = read_wav(wav_path);
      if (!audio.is_stereo()) throw Error("expected a stereo WAV: " + wav_path);
      std::optional<EarFilter> filter;
      if (!loc_no_ear) filter = detail::default_ear_filter(profile_path, audio.sample_rate(), 1025);
      if (probe->parsed()) {
        if (transform == "swap")
          audio = channel_swapped(audio);
        else if (transform == "diotic")
          audio = diotic(audio);
        else if (transform != "none")
          throw Error("probe: unknown transform '" + transform + "'");
        ProbeOptions opts;
        opts.with_ear_noise = !loc_no_ear;
        opts.filter = filter ? &*filter : nullptr;
        opts.seed = seed;
        opts.utterance_id = std::filesystem::path(wav_path).stem().string();
        const auto rec = cue_preservation_probe(audio, reference_az, crn_estimator(load_checkpoint(loc_ckpt)), opts);
        out << "reference " << rec.true_azimuth_deg << " estimate " << rec.estimated_azimuth_deg << " error "
            << rec.abs_error_deg << "\n";
      } else {
        if (filter) audio = add_ear_noise(calibrate_level(audio, 62.35, filter->levels), *filter, seed);
        const auto feats = extract_features(audio);
        if (!loc_ckpt.empty()) out << "crn " << crn_azimuth(feats, load_checkpoint(loc_ckpt)) << "\n";
        out << "srp " << srp_phat(feats).azimuth_deg << "\n";
      }
    } else if (serve->parsed()) {
      scfg.seed = seed;
      const auto pool = read_manifest(pool_path);
      Session session(scfg, pool, results_log);
      ListeningService service(session, ui_dir);
      detail::g_service = &service;
      std::signal(SIGINT, [](int) {
        if (auto* s = detail::g_service.load()) s->stop();
      });
      out << "serving " << scfg.trial_count << " trials on http://" << host << ":" << port << " (log "
          << results_log << ", " << session.answered() << " answered)\n"
          << std::flush;
      service.run(host, port);
      detail::g_service = nullptr;
    } else if (compare->parsed()) {
      const auto pool = read_manifest(cmp_pool);
      FeatureEstimator model;
      if (!cmp_ckpt.empty()) model = crn_estimator(load_checkpoint(cmp_ckpt));
      const auto report = compare_human_model(read_results_log(cmp_log), pool, model, srp_estimator());
      emit_report(report, cmp_out);
      out << format_report_table(report);
    } else if (describe_cmd->parsed()) {
      if (config_template) {
        // empty values would read back as a literal "" (or 0 for lists); leave them unset
        std::istringstream tmpl(app.config_to_str(true, true));
        for (std::string line; std::getline(tmpl, line);) {
          if (line.size() > 3 && line.compare(line.size() - 3, 3, "=\"\"") == 0) line = "# " + line;
          out << line << '\n';
        }
        return 0;
      }
      const auto cfg = detail::named_model(model_name);
      out << format_shape_table(describe(cfg, frames));
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace binloc
