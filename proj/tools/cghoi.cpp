#include <CLI11.hpp>
#include <iostream>

#include "cghoi/cli/commands.hpp"

using namespace cghoi;

namespace {

int fail(int code, const std::string& msg) {
  std::cerr << "ERROR " << code << ": " << msg << "\n";
  return code;
}

cli::RunConfig config_or_default(const std::string& path) {
  if (path.empty()) return cli::RunConfig{};
  cli::require_exists(path, "config file");
  return cli::load_run_config(path);
}

// Flags that fully determine a sample, next to the output file.
void write_sample_args(const cli::SampleArgs& a) {
  std::string s = "ckpt = " + a.ckpt + "\ntext = " + a.text + "\nobject = " + a.object +
                  "\nframes = " + (a.frames ? std::to_string(*a.frames) : std::string("model")) +
                  "\nseed = " + std::to_string(a.seed) + "\ncfg_scale = " + train::format_double(a.guidance.cfg_scale) +
                  "\ncontact_scale = " + train::format_double(a.guidance.contact_scale) +
                  "\ncontact_guidance = " + (a.guidance.contact_guidance ? "true" : "false") + "\n";
  if (!a.track.empty()) s += "track = " + a.track + "\n";
  diffkit::detail::write_file(a.out + ".args", s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Text- and object-conditioned human-object interaction diffusion on synthetic data"};
  app.require_subcommand(1);

  std::string config, out, data, ckpt, generated, seq, object_ref;
  bool no_weighting = false, no_guidance = false;
  std::uint64_t template_seed = 0;
  cli::SampleArgs sa;
  std::size_t frames = 0;

  auto* synth = app.add_subcommand("synth-data", "generate a synthetic dataset");
  synth->add_option("--config", config, "run config file");
  synth->add_option("--out", out, "output directory")->required();

  auto* trn = app.add_subcommand("train", "train a denoiser");
  trn->add_option("--config", config, "run config file");
  trn->add_option("--data", data, "dataset directory")->required();
  trn->add_option("--out", out, "run directory")->required();
  trn->add_flag("--no-contact-weighting", no_weighting, "single direct object head");

  auto add_sample_opts = [&](CLI::App* c) {
    c->add_option("--ckpt", sa.ckpt, "checkpoint")->required();
    c->add_option("--text", sa.text, "text prompt")->required();
    c->add_option("--object", sa.object, "built-in object name or mesh file")->required();
    c->add_option("--frames", frames, "frame count (default: the model's)");
    c->add_option("--seed", sa.seed, "sampling seed");
    c->add_option("--cfg-scale", sa.guidance.cfg_scale, "classifier-free guidance scale");
    c->add_option("--contact-scale", sa.guidance.contact_scale, "contact guidance scale");
    c->add_flag("--no-contact-guidance", no_guidance, "disable contact guidance");
    c->add_option("--out", sa.out, "output sequence file")->required();
  };
  auto* smp = app.add_subcommand("sample", "sample one sequence");
  add_sample_opts(smp);
  auto* traj = app.add_subcommand("sample-traj", "sample with an injected object track");
  add_sample_opts(traj);
  traj->add_option("--track", sa.track, "sequence file providing the object channels")->required();

  auto* ev = app.add_subcommand("eval", "evaluation report");
  ev->add_option("--config", config, "run config file");
  ev->add_option("--ckpt", ckpt, "checkpoint to sample from");
  ev->add_option("--data", data, "dataset directory")->required();
  ev->add_option("--out", out, "report directory")->required();
  ev->add_option("--generated", generated, "dataset directory used as the generated set instead of sampling");

  auto* exp = app.add_subcommand("export-mesh", "per-frame body and object meshes");
  exp->add_option("--seq", seq, "sequence file")->required();
  exp->add_option("--template", template_seed, "body template seed")->required();
  exp->add_option("--out-dir", out, "output directory")->required();
  exp->add_option("--object", object_ref, "object mesh (default: point cloud only)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(1, e.what());
  }

  try {
    if (synth->parsed()) {
      auto cfg = config_or_default(config);
      cli::synth_data(cfg, out);
    } else if (trn->parsed()) {
      auto cfg = config_or_default(config);
      if (no_weighting) cfg.model.contact_weighting = false;
      cli::train_run(cfg, data, out);
    } else if (smp->parsed() || traj->parsed()) {
      if (frames) sa.frames = frames;
      sa.guidance.contact_guidance = !no_guidance;
      sa.guidance.validate();
      cli::sample_run(sa);
      write_sample_args(sa);
      std::cout << "wrote " << sa.out << "\n";
    } else if (ev->parsed()) {
      auto cfg = config_or_default(config);
      cli::eval_run(cfg, ckpt, data, out, generated);
    } else if (exp->parsed()) {
      cli::export_mesh(seq, template_seed, out, object_ref);
    }
  } catch (const ValidationError& e) {
    return fail(2, e.what());
  } catch (const ParseError& e) {
    return fail(2, e.what());
  } catch (const std::exception& e) {
    return fail(3, e.what());
  }
  return 0;
}
