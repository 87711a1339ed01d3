#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "atres/atres.hpp"

namespace fs = std::filesystem;
using namespace atres;

namespace {

struct CommonRun {
  std::string config_path;
  std::string variant;
  std::size_t base_width = 0, patch_size = 0, epochs = 0, batch_size = 0, offset = 0;
  double lr = -1.0, threshold = -1.0, min_tissue = -1.0;
  std::string fill;
  std::optional<std::uint64_t> seed;
};

void add_run_flags(CLI::App* app, CommonRun& r) {
  app->add_option("--config", r.config_path, "key = value run configuration");
  app->add_option("--variant", r.variant, "unet | resunet | atresunet");
  app->add_option("--base-width", r.base_width);
  app->add_option("--patch-size", r.patch_size);
  app->add_option("--epochs", r.epochs);
  app->add_option("--batch-size", r.batch_size);
  app->add_option("--offset", r.offset, "tile shift for stitched inference");
  app->add_option("--lr", r.lr);
  app->add_option("--threshold", r.threshold);
  app->add_option("--min-tissue", r.min_tissue);
  app->add_option("--padding-fill", r.fill, "zero | white | reflect");
  app->add_option("--seed", r.seed);
}

io::RunConfig resolve(const CommonRun& r) {
  io::RunConfig c = r.config_path.empty() ? io::RunConfig{} : io::load_run_config(r.config_path);
  if (!r.variant.empty()) c.variant = parse_variant(r.variant);
  if (r.base_width) c.base_width = r.base_width;
  if (r.patch_size) c.patch_size = r.patch_size;
  if (r.epochs) c.epochs = r.epochs;
  if (r.batch_size) c.batch_size = r.batch_size;
  if (r.offset) c.offset = r.offset;
  if (r.lr >= 0) c.lr = r.lr;
  if (r.threshold >= 0) c.threshold = r.threshold;
  if (r.min_tissue >= 0) c.min_tissue = r.min_tissue;
  if (!r.fill.empty()) c.padding_fill = parse_pad_fill(r.fill);
  if (r.seed) c.seed = *r.seed;
  c.validate();
  return c;
}

std::set<std::string> read_ids(const std::string& path) {
  std::set<std::string> ids;
  if (path.empty()) return ids;
  for (const auto& line : io::split(io::read_text(path), '\n')) {
    if (!line.empty() && line[0] != '#') ids.insert(line);
  }
  return ids;
}

std::vector<io::ManifestEntry> select(const std::string& manifest, const std::string& only) {
  auto entries = io::read_manifest(manifest);
  const auto ids = read_ids(only);
  if (ids.empty()) return entries;
  std::vector<io::ManifestEntry> out;
  for (auto& e : entries)
    if (ids.count(e.id)) out.push_back(std::move(e));
  if (out.empty()) throw DataError("no manifest entry matches the ids in '" + only + "'");
  return out;
}

// Loaded checkpoints plus the stitching settings used for prediction.
struct Predictor {
  std::vector<Model> models;
  StitchOptions stitch;
  std::vector<GeoOp> transforms;
  bool self_ens = false;
  float thr = 0.5f;

  SegmentationMap operator()(const ImageRGB& img) {
    std::vector<SegmentationMap> maps;
    for (auto& m : models) {
      maps.push_back(self_ens ? self_ensemble(m, img, stitch, transforms) : predict_full(m, img, stitch));
    }
    return maps.size() == 1 ? maps[0] : model_ensemble(maps);
  }

  nlohmann::ordered_json describe(const std::vector<std::string>& ckpts) const {
    nlohmann::ordered_json j;
    j["checkpoints"] = ckpts;
    j["patch_size"] = stitch.patch_size;
    j["offset"] = stitch.offset ? stitch.offset : stitch.patch_size / 2;
    j["padding_fill"] = std::string(pad_fill_name(stitch.fill));
    j["self_ensemble"] = self_ens;
    std::vector<std::string> names;
    if (self_ens)
      for (auto t : transforms) names.emplace_back(geo_op_name(t));
    j["transforms"] = names;
    j["threshold"] = thr;
    return j;
  }
};

Predictor make_predictor(const std::vector<std::string>& ckpts, const io::RunConfig& cfg, bool patch_from_ckpt,
                         bool self_ens) {
  if (ckpts.empty()) throw DataError("give --checkpoint or --ensemble");
  Predictor p;
  for (const auto& c : ckpts) p.models.push_back(io::load_checkpoint(c).model);
  p.stitch = cfg.stitch_options();
  if (patch_from_ckpt) {
    p.stitch.patch_size = p.models[0].config().patch_size;
    p.stitch.offset = cfg.offset;
  }
  for (const auto& m : p.models) {
    if (m.config().patch_size != p.models[0].config().patch_size)
      throw DataError("ensemble members were trained with different patch sizes");
  }
  p.stitch.threads = default_threads();
  p.transforms = cfg.ensemble_transforms;
  p.self_ens = self_ens;
  p.thr = static_cast<float>(cfg.threshold);
  return p;
}

std::vector<std::string> checkpoint_list(const std::string& single, const std::string& ensemble) {
  if (!single.empty() && !ensemble.empty()) throw DataError("--checkpoint and --ensemble are exclusive");
  if (!single.empty()) return {single};
  std::vector<std::string> out;
  if (!ensemble.empty())
    for (auto& s : io::split(ensemble, ',')) out.push_back(s);
  if (out.size() == 1) throw DataError("--ensemble needs at least two checkpoints");
  return out;
}

std::string fmt(const std::optional<double>& v) {
  if (!v) return "   n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%6.4f", *v);
  return buf;
}

nlohmann::ordered_json opt_json(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

int cmd_train(const CommonRun& run, const std::string& data, const std::string& out_dir) {
  const io::RunConfig cfg = resolve(run);
  const auto dataset = io::load_dataset(data);
  fs::create_directories(out_dir);
  io::write_text((fs::path(out_dir) / "config.txt").string(), io::format_run_config(cfg));
  std::FILE* log = std::fopen((fs::path(out_dir) / "train_log.jsonl").string().c_str(), "wb");
  std::FILE* timing = std::fopen((fs::path(out_dir) / "timing.jsonl").string().c_str(), "wb");
  if (!log || !timing) throw DataError("cannot write logs in '" + out_dir + "'");
  const TrainResult res = train(cfg.train_options(), dataset, [&](const EpochRecord& r) {
    const auto line = io::epoch_line(r);
    std::fputs(line.c_str(), log);
    std::fflush(log);
    std::fputs(io::timing_line(r).c_str(), timing);
    std::fprintf(stderr, "epoch %zu  lr %.3g  train_dice %.4f  val_dice %s  (%.1fs)\n", r.epoch, r.lr, r.train_dice,
                 fmt(r.val_dice).c_str(), r.wall_time);
  });
  std::fclose(log);
  std::fclose(timing);
  Model best = res.best, last = res.last;
  io::save_checkpoint((fs::path(out_dir) / "best.ckpt").string(), best,
                      {cfg.seed, res.best_epoch, res.best_metric});
  const auto& lr = res.history.back();
  io::save_checkpoint((fs::path(out_dir) / "last.ckpt").string(), last,
                      {cfg.seed, lr.epoch, lr.val_dice.value_or(lr.train_dice)}, &res.optimizer);
  for (const auto& [name, ids] : {std::pair{"train_ids.txt", &res.split.train}, std::pair{"val_ids.txt", &res.split.val},
                                  std::pair{"test_ids.txt", &res.split.test}}) {
    std::string s;
    for (auto i : *ids) s += dataset[i].id + "\n";
    io::write_text((fs::path(out_dir) / name).string(), s);
  }
  std::printf("trained %s: %zu train / %zu val patches, best epoch %zu (dice %.4f) -> %s\n",
              std::string(variant_name(cfg.variant)).c_str(), res.train_patches, res.val_patches, res.best_epoch,
              res.best_metric, out_dir.c_str());
  return 0;
}

int cmd_predict(const CommonRun& run, const std::string& ckpt, const std::string& ens, bool self_ens,
                const std::string& input, const std::string& manifest, const std::string& only,
                const std::string& out_dir) {
  const io::RunConfig cfg = resolve(run);
  const auto ckpts = checkpoint_list(ckpt, ens);
  Predictor pred = make_predictor(ckpts, cfg, run.patch_size == 0 && run.config_path.empty(), self_ens);
  std::vector<std::pair<std::string, fs::path>> jobs;
  if (!input.empty()) jobs.emplace_back(fs::path(input).stem().string(), input);
  if (!manifest.empty())
    for (const auto& e : select(manifest, only)) jobs.emplace_back(e.id, e.image);
  if (jobs.empty()) throw DataError("give --input or --manifest");
  fs::create_directories(out_dir);
  for (const auto& [id, path] : jobs) {
    const ImageRGB img = io::read_rgb(path.string());
    const SegmentationMap prob = pred(img);
    const SegmentationMap bin = threshold(prob, pred.thr);
    const fs::path base = fs::path(out_dir) / id;
    io::write_prob16(base.string() + "_prob.png", prob);
    io::write_binary_map(base.string() + "_mask.png", bin);
    io::write_rgb(base.string() + "_overlay.png", io::overlay(img, bin));
    auto meta = pred.describe(ckpts);
    meta["image"] = path.string();
    meta["width"] = img.width;
    meta["height"] = img.height;
    io::write_text(base.string() + ".json", meta.dump(2) + "\n");
    std::printf("%s -> %s_{prob,mask,overlay}.png\n", path.string().c_str(), base.string().c_str());
  }
  return 0;
}

int cmd_eval(const CommonRun& run, const std::string& data, const std::string& only, const std::string& pred_dir,
             const std::string& ckpt, const std::string& ens, bool self_ens, const std::string& report) {
  const io::RunConfig cfg = resolve(run);
  const auto entries = select(data, only);
  std::optional<Predictor> pred;
  if (pred_dir.empty()) pred = make_predictor(checkpoint_list(ckpt, ens), cfg, run.patch_size == 0 && run.config_path.empty(), self_ens);

  std::string lines;
  nlohmann::ordered_json head;
  head["record"] = "header";
  head["aggregation"] = "macro";
  head["note"] = "per-image metrics averaged with equal weight; undefined values are skipped";
  head["images"] = entries.size();
  lines += head.dump() + "\n";

  std::vector<std::optional<double>> acc, dice, sen, spe;
  ConfusionCounts pooled;
  std::printf("%-24s %8s %8s %8s %8s\n", "image", "acc", "dice", "sen", "spe");
  for (const auto& e : entries) {
    const SegmentationMap truth = io::to_map(io::read_mask(e.mask.string()));
    SegmentationMap bin;
    if (pred) {
      bin = threshold((*pred)(io::read_rgb(e.image.string())), pred->thr);
    } else {
      bin = io::to_map(io::read_mask((fs::path(pred_dir) / (e.id + "_mask.png")).string()));
    }
    const ConfusionCounts c = confusion(bin, truth);
    pooled += c;
    const MetricSummary m = summarize(c);
    acc.push_back(m.accuracy);
    dice.push_back(m.dice);
    sen.push_back(m.sensitivity);
    spe.push_back(m.specificity);
    nlohmann::ordered_json j;
    j["record"] = "image";
    j["id"] = e.id;
    j["tp"] = c.tp;
    j["fp"] = c.fp;
    j["tn"] = c.tn;
    j["fn"] = c.fn;
    j["accuracy"] = opt_json(m.accuracy);
    j["dice"] = opt_json(m.dice);
    j["sensitivity"] = opt_json(m.sensitivity);
    j["specificity"] = opt_json(m.specificity);
    lines += j.dump() + "\n";
    std::printf("%-24s %8s %8s %8s %8s\n", e.id.c_str(), fmt(m.accuracy).c_str(), fmt(m.dice).c_str(),
                fmt(m.sensitivity).c_str(), fmt(m.specificity).c_str());
  }
  nlohmann::ordered_json sum;
  sum["record"] = "summary";
  for (const auto& [name, vals] : {std::pair{"accuracy", &acc}, std::pair{"dice", &dice},
                                   std::pair{"sensitivity", &sen}, std::pair{"specificity", &spe}}) {
    const MacroMetric mm = macro_average(*vals);
    sum[name] = opt_json(mm.mean);
    sum[std::string(name) + "_undefined"] = mm.undefined;
  }
  sum["pooled_dice"] = opt_json(dice_from_counts(pooled));
  lines += sum.dump() + "\n";
  std::printf("%-24s %8s %8s %8s %8s   (macro average over %zu images)\n", "mean",
              fmt(macro_average(acc).mean).c_str(), fmt(macro_average(dice).mean).c_str(),
              fmt(macro_average(sen).mean).c_str(), fmt(macro_average(spe).mean).c_str(), entries.size());
  if (!report.empty()) io::write_text(report, lines);
  return 0;
}

int cmd_gradcheck(std::size_t seeds, double tol) {
  GradCheckOptions opt;
  opt.tolerance = tol;
  std::map<std::string, double> worst;
  std::vector<std::string> order;
  bool ok = true;
  for (std::size_t s = 0; s < seeds; ++s) {
    for (const auto& r : run_gradcheck_suite(s, opt)) {
      if (!worst.count(r.name)) order.push_back(r.name);
      worst[r.name] = std::max(worst[r.name], r.max_rel_error);
      ok = ok && r.pass;
    }
  }
  for (const auto& n : order) {
    std::printf("%-22s max rel err %.3e  %s\n", n.c_str(), worst[n], worst[n] < tol ? "ok" : "FAIL");
  }
  std::printf("gradcheck: %s over %zu seeds\n", ok ? "all ops pass" : "failures", seeds);
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"atres: dilated residual U-Net segmentation"};
  app.require_subcommand(1);

  CommonRun train_run, pred_run, eval_run;
  std::string train_data, train_out;
  auto* tr = app.add_subcommand("train", "train a model; writes checkpoints and a JSON-lines log");
  add_run_flags(tr, train_run);
  tr->add_option("--data", train_data, "dataset manifest")->required();
  tr->add_option("--out", train_out, "output directory")->required();

  std::string ckpt, ens, input, manifest, only, pred_out;
  bool self_ens = false;
  auto* pr = app.add_subcommand("predict", "stitched full-image prediction");
  add_run_flags(pr, pred_run);
  pr->add_option("--checkpoint", ckpt);
  pr->add_option("--ensemble", ens, "comma-separated checkpoints, averaged");
  pr->add_flag("--self-ensemble", self_ens, "average over flips and rotations");
  pr->add_option("--input", input, "single image");
  pr->add_option("--manifest", manifest);
  pr->add_option("--only", only, "file of image ids to keep");
  pr->add_option("--out", pred_out)->required();

  std::string eval_data, eval_only, pred_dir, eval_ckpt, eval_ens, report;
  bool eval_self = false;
  auto* ev = app.add_subcommand("eval", "metrics against ground-truth masks");
  add_run_flags(ev, eval_run);
  ev->add_option("--data", eval_data, "dataset manifest")->required();
  ev->add_option("--only", eval_only, "file of image ids to keep");
  ev->add_option("--pred-dir", pred_dir, "directory of <id>_mask.png from predict");
  ev->add_option("--checkpoint", eval_ckpt);
  ev->add_option("--ensemble", eval_ens);
  ev->add_flag("--self-ensemble", eval_self);
  ev->add_option("--report", report, "JSON-lines report path");

  std::size_t sn = 40, ssize = 128;
  std::uint64_t sseed = 0;
  std::string sout;
  auto* sy = app.add_subcommand("synth", "write a synthetic dataset");
  sy->add_option("--n", sn);
  sy->add_option("--size", ssize);
  sy->add_option("--seed", sseed);
  sy->add_option("--out", sout)->required();

  std::size_t gseeds = 20;
  double gtol = 1e-3;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every differentiable op");
  gc->add_option("--seeds", gseeds);
  gc->add_option("--tolerance", gtol);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (tr->parsed()) return cmd_train(train_run, train_data, train_out);
    if (pr->parsed()) return cmd_predict(pred_run, ckpt, ens, self_ens, input, manifest, only, pred_out);
    if (ev->parsed()) return cmd_eval(eval_run, eval_data, eval_only, pred_dir, eval_ckpt, eval_ens, eval_self, report);
    if (sy->parsed()) {
      io::write_synth_dataset(sout, sn, {ssize, sseed});
      std::printf("wrote %zu images to %s\n", sn, sout.c_str());
      return 0;
    }
    if (gc->parsed()) return cmd_gradcheck(gseeds, gtol);
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
