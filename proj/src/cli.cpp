#include "aumask/cli.hpp"

#include "aumask/align.hpp"
#include "aumask/association.hpp"
#include "aumask/checkpoint.hpp"
#include "aumask/dataops.hpp"
#include "aumask/error.hpp"
#include "aumask/image.hpp"
#include "aumask/io.hpp"
#include "aumask/masked_loss.hpp"
#include "aumask/metrics.hpp"
#include "aumask/phenotypes.hpp"
#include "aumask/trainer.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <array>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <tuple>

namespace aumask::cli {
namespace {

namespace fs = std::filesystem;

/// Salt that separates the validation split from the test split.
constexpr std::uint64_t kValidationSalt = 0x5eed'0f'7a11ULL;

/// Image refs are stored relative to the directory of the file that lists
/// them, so an output directory can move together with its inputs.
std::string portable_ref(const std::string& ref, const fs::path& dir) {
  if (ref.empty()) return ref;
  const fs::path abs = fs::absolute(ref).lexically_normal();
  const fs::path rel = abs.lexically_relative(fs::absolute(dir).lexically_normal());
  return rel.empty() ? abs.generic_string() : rel.generic_string();
}

void write_records(const fs::path& path, std::vector<SampleRecord> records) {
  for (auto& r : records) r.image_ref = portable_ref(r.image_ref, path.parent_path());
  write_manifest(path, records);
}

Image load_model_image(const std::string& ref, const std::string& what, const ModelConfig& model) {
  if (ref.empty()) throw ValidationError(what + " has no image_ref");
  Image image = read_netpbm(ref);
  if (image.channels() != model.channels || image.height() != model.image_size ||
      image.width() != model.image_size) {
    throw ValidationError(what + ": image " + ref + " is " + std::to_string(image.height()) + "x" +
                          std::to_string(image.width()) + "x" + std::to_string(image.channels()) +
                          ", the model expects " + std::to_string(model.image_size) + "x" +
                          std::to_string(model.image_size) + "x" + std::to_string(model.channels));
  }
  return image;
}

std::vector<TrainingSample<double>> load_samples(std::span<const SampleRecord> records, const ModelConfig& model) {
  std::vector<TrainingSample<double>> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back({load_model_image(r.image_ref, "sample " + r.sample_id, model), r.labels});
  return out;
}

fs::path checkpoint_or_default(const fs::path& given, const OutputLayout& out) {
  return given.empty() ? out.checkpoint() : given;
}

OutputLayout prepare_output(const PipelineConfig& config) {
  fs::create_directories(config.output_dir);
  return {config.output_dir};
}

bool safe_file_stem(const std::string& id) {
  return !id.empty() && id != "." && id != ".." &&
         std::all_of(id.begin(), id.end(), [](char c) { return c != '/' && c != '\\' && c != '\0'; });
}

// ---------------------------------------------------------------------------
// associate

struct Contrast {
  PhenotypeKind kind;
  const char* name;
  std::array<const char*, 2> classes;
};

constexpr std::array<Contrast, 3> kContrasts = {{
    {PhenotypeKind::kPain, "pain", {"low", "high"}},
    {PhenotypeKind::kAcuity, "acuity", {"stable", "unstable"}},
    {PhenotypeKind::kAbd, "abd", {"normal", "abnormal"}},
}};

/// Binary class of an interval label; nullopt for unlabeled ABD intervals.
std::optional<int> label_class(PhenotypeKind kind, const std::string& label) {
  switch (kind) {
    case PhenotypeKind::kPain:
      if (label == "low") return 0;
      if (label == "high") return 1;
      break;
    case PhenotypeKind::kAcuity:
      if (label == "stable") return 0;
      if (label == "unstable") return 1;
      break;
    case PhenotypeKind::kAbd:
      if (label == "normal") return 0;
      if (label == "delirium" || label == "coma") return 1;
      if (label == "unlabeled") return std::nullopt;
      break;
  }
  throw ValidationError("unknown " + std::string(to_string(kind)) + " label '" + label + "'");
}

using IntervalIndex = std::map<std::pair<std::string, PhenotypeKind>, std::vector<const PhenotypeInterval*>>;

enum class FrameClass { kNone, kLow, kHigh, kConflict };

/// Pain windows are closed; acuity and ABD intervals are half-open.
FrameClass classify(const IntervalIndex& index, const std::string& patient, PhenotypeKind kind, double ts) {
  const auto it = index.find({patient, kind});
  if (it == index.end()) return FrameClass::kNone;
  std::set<int> seen;
  for (const PhenotypeInterval* iv : it->second) {
    const bool inside = kind == PhenotypeKind::kPain ? iv->start <= ts && ts <= iv->end : iv->start <= ts && ts < iv->end;
    if (!inside) continue;
    if (const auto c = label_class(kind, iv->label)) seen.insert(*c);
  }
  if (seen.empty()) return FrameClass::kNone;
  if (seen.size() > 1) return FrameClass::kConflict;
  return *seen.begin() == 0 ? FrameClass::kLow : FrameClass::kHigh;
}

}  // namespace

MergeSummary cmd_merge(const PipelineConfig& config, std::ostream& log) {
  if (config.datasets.empty()) throw ValidationError("no dataset manifests configured");
  std::vector<DatasetInput> inputs;
  std::map<std::string, std::size_t> slot;
  for (const auto& src : config.datasets) {
    auto records = read_manifest(src.manifest, ManifestOptions{src.intensity});
    for (auto& r : records) {
      const auto [it, fresh] = slot.emplace(r.dataset_id, inputs.size());
      if (fresh) {
        const DatasetCoverage* cov = find_coverage(config.coverages, r.dataset_id);
        if (!cov) throw ValidationError(src.manifest.string() + ": no coverage entry for dataset '" + r.dataset_id + "'");
        inputs.push_back({{}, *cov});
      }
      inputs[it->second].records.push_back(std::move(r));
    }
  }
  const auto merged = merge_datasets(inputs);
  if (merged.empty()) throw ValidationError("the dataset manifests hold no records");

  MergeSummary summary;
  summary.records = static_cast<std::int64_t>(merged.size());
  for (const auto& in : inputs) {
    DatasetSummary d;
    d.dataset_id = in.coverage.dataset_id;
    d.records = static_cast<std::int64_t>(in.records.size());
    d.covered = static_cast<int>(in.coverage.covered_aus.size());
    summary.datasets.push_back(d);
  }
  for (const auto& r : merged) {
    auto& d = summary.datasets[slot.at(r.dataset_id)];
    const int row = build_mask(r.labels).sum();
    d.max_row_mask = std::max(d.max_row_mask, row);
    d.mask_sum += row;
  }

  const OutputLayout out = prepare_output(config);
  write_records(out.merged(), merged);
  log << "merged " << summary.records << " records into " << out.merged().string() << '\n';
  for (const auto& d : summary.datasets) {
    log << "  " << d.dataset_id << ": " << d.records << " records, " << d.covered << " covered AUs, mask sum "
        << d.mask_sum << '\n';
  }
  return summary;
}

void cmd_split(const PipelineConfig& config, std::ostream& log) {
  const OutputLayout out = prepare_output(config);
  const auto records = read_manifest(out.merged());
  const auto split = subject_split(records, config.test_fraction, config.seed);
  write_records(out.train(), split.train);
  write_records(out.test(), split.test);
  log << "split " << records.size() << " records: " << split.train.size() << " train, " << split.test.size()
      << " test\n";
}

void cmd_align(const PipelineConfig& config, std::ostream& log) {
  if (config.landmarks.empty()) throw ValidationError("no landmark manifest configured");
  const auto records = read_landmark_manifest(config.landmarks);
  std::set<std::string> ids;
  for (const auto& r : records) {
    if (!safe_file_stem(r.frame_id)) throw ValidationError("frame_id '" + r.frame_id + "' cannot name a file");
    if (!ids.insert(r.frame_id).second) throw ValidationError("frame_id '" + r.frame_id + "' appears twice");
    if (r.image_ref.empty()) throw ValidationError("landmark record " + r.frame_id + " has no image_ref");
  }
  const OutputLayout out = prepare_output(config);
  fs::create_directories(out.aligned());
  const int size = config.crop_size();
  std::string index = "frame_id,image_ref\n";
  for (const auto& r : records) {
    const Image image = read_netpbm(r.image_ref);
    const std::string name = r.frame_id + (image.channels() == 1 ? ".pgm" : ".ppm");
    write_netpbm(out.aligned() / name, align_face(image, r.points, size));
    index += r.frame_id + ',' + name + '\n';
  }
  io::write_file_atomic(out.aligned() / "index.csv", index);
  log << "aligned " << records.size() << " faces to " << size << "x" << size << " in " << out.aligned().string()
      << '\n';
}

void cmd_train(const PipelineConfig& config, std::ostream& log) {
  const OutputLayout out = prepare_output(config);
  const auto records = read_manifest(out.train());
  if (records.empty()) throw ValidationError(out.train().string() + " has no records");
  std::vector<SampleRecord> fit = records, held;
  if (config.validation_fraction > 0.0) {
    auto s = subject_split(records, config.validation_fraction, config.seed ^ kValidationSalt);
    fit = std::move(s.train);
    held = std::move(s.test);
  }
  const auto train_set = load_samples(fit, config.model);
  const auto val_set = load_samples(held, config.model);

  const auto result = train<double>(config.model, init_parameters<double>(config.model), train_set, val_set,
                                    config.train, [&](const EpochRecord& r) {
                                      log << "epoch " << r.epoch << " train_loss " << io::format_double(r.train_loss);
                                      if (r.val_loss) log << " val_loss " << io::format_double(*r.val_loss);
                                      log << (r.stopped_early ? " (early stop)\n" : "\n");
                                    });
  save_checkpoint(out.checkpoint(), {config.model, result.params});
  io::write_file_atomic(out.run_log(), format_run_log(result.log));
  log << "wrote " << out.checkpoint().string() << " after " << result.log.size() << " epochs\n";
}

void cmd_eval(const PipelineConfig& config, const fs::path& checkpoint, std::ostream& log) {
  const OutputLayout out = prepare_output(config);
  const Checkpoint ckpt = load_checkpoint(checkpoint_or_default(checkpoint, out));
  const auto records = read_manifest(out.test());
  if (records.empty()) throw ValidationError(out.test().string() + " has no records");
  const auto samples = load_samples(records, ckpt.config);

  const auto n = static_cast<Eigen::Index>(samples.size());
  Eigen::Array<double, Eigen::Dynamic, kNumAus, Eigen::RowMajor> probs(n, kNumAus);
  LabelMatrix labels(n, kNumAus);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = samples[static_cast<std::size_t>(i)];
    probs.row(i) = forward(s.image, ckpt.params, ckpt.config).array().unaryExpr([](double z) {
      return stable_sigmoid(z);
    });
    labels.row(i) = s.labels;
  }
  const LabelMatrix preds = threshold_predictions(probs, config.thresholds.prediction);
  const auto report = MetricsReport::from_counts(confusion(preds, labels, build_mask_matrix(labels)));
  write_metrics_report(out.metrics(), report);
  const auto [f1, acc] = mean_available_metrics(report);
  log << "evaluated " << n << " test records: mean F1 " << io::format_double(f1) << ", mean accuracy "
      << io::format_double(acc) << '\n';
}

void cmd_infer(const PipelineConfig& config, const fs::path& checkpoint, std::ostream& log) {
  if (config.frames.empty()) throw ValidationError("no frame manifest configured");
  const OutputLayout out = prepare_output(config);
  const auto frames = read_frame_manifest(config.frames);
  for (const auto& f : frames) {
    if (f.image_ref.empty()) throw ValidationError("frame " + f.frame_id + " has no image_ref");
  }
  const Checkpoint ckpt = load_checkpoint(checkpoint_or_default(checkpoint, out));
  std::vector<FrameDetection> detections;
  detections.reserve(frames.size());
  for (const auto& f : frames) {
    const Image image = load_model_image(f.image_ref, "frame " + f.frame_id, ckpt.config);
    FrameDetection d{f.frame_id, f.video_id, f.patient_id, AuProbabilities::Zero(), 0};
    d.probability = forward(image, ckpt.params, ckpt.config).array().unaryExpr([](double z) {
      return stable_sigmoid(z);
    });
    detections.push_back(std::move(d));
  }
  write_detections(out.detections(), detections);
  log << "inferred " << detections.size() << " frames into " << out.detections().string() << '\n';
}

void cmd_phenotype(const PipelineConfig& config, std::ostream& log) {
  if (config.ehr.stays.empty()) throw ValidationError("no stays file configured");
  const auto stays = read_stays(config.ehr.stays);
  const auto pain = config.ehr.pain.empty() ? std::vector<PainEvent>{} : read_pain_events(config.ehr.pain);
  const auto therapies =
      config.ehr.therapies.empty() ? std::vector<TherapyInterval>{} : read_therapies(config.ehr.therapies);
  const auto assessments =
      config.ehr.assessments.empty() ? std::vector<AssessmentEvent>{} : read_assessments(config.ehr.assessments);
  const auto intervals = compute_phenotypes(stays, pain, therapies, assessments, config.phenotype);
  const OutputLayout out = prepare_output(config);
  write_phenotypes(out.phenotypes(), intervals);
  log << "labeled " << intervals.size() << " intervals for " << stays.size() << " stays\n";
}

void cmd_associate(const PipelineConfig& config, std::ostream& log, std::ostream& warn) {
  if (config.frames.empty()) throw ValidationError("no frame manifest configured");
  const OutputLayout out = prepare_output(config);
  const auto detections = read_detections(out.detections());
  const auto frames = read_frame_manifest(config.frames);
  const auto intervals = read_phenotypes(out.phenotypes());
  const auto metrics = read_metrics_report(out.metrics());

  std::map<std::string, const FrameEvent*> frame_by_id;
  for (const auto& f : frames) frame_by_id.emplace(f.frame_id, &f);
  std::vector<double> timestamps;
  for (const auto& d : detections) {
    const auto it = frame_by_id.find(d.frame_id);
    if (it == frame_by_id.end()) {
      throw ValidationError("detected frame " + d.frame_id + " is not in " + config.frames.string());
    }
    if (it->second->patient_id != d.patient_id) {
      throw ValidationError("frame " + d.frame_id + " belongs to different patients in the detections and the frame manifest");
    }
    timestamps.push_back(it->second->timestamp);
  }
  IntervalIndex index;
  for (const auto& iv : intervals) index[{iv.patient_id, iv.kind}].push_back(&iv);

  const auto passing = inclusion_filter(metrics, config.thresholds.inclusion_f1, config.thresholds.inclusion_accuracy);
  log << passing.size() << " AUs pass the inclusion filter\n";

  std::string presence = "contrast,class,frames,au,detected,ratio\n";
  std::string report = "contrast,au,beta,se,p,sign,significant\n";
  for (const Contrast& c : kContrasts) {
    std::vector<FrameDetection> labeled;
    std::vector<int> classes;
    std::int64_t conflicts = 0;
    for (std::size_t i = 0; i < detections.size(); ++i) {
      const FrameClass fc = classify(index, detections[i].patient_id, c.kind, timestamps[i]);
      if (fc == FrameClass::kConflict) ++conflicts;
      if (fc != FrameClass::kLow && fc != FrameClass::kHigh) continue;
      FrameDetection f = detections[i];
      f.outcome = fc == FrameClass::kHigh ? 1 : 0;
      f.video_id += '#';
      f.video_id += c.classes[static_cast<std::size_t>(f.outcome)];
      classes.push_back(f.outcome);
      labeled.push_back(std::move(f));
    }
    log << c.name << ": " << labeled.size() << " labeled frames";
    if (conflicts > 0) log << ", " << conflicts << " dropped for conflicting labels";
    log << '\n';
    const auto positives = std::count(classes.begin(), classes.end(), 1);
    if (positives == 0 || positives == static_cast<std::ptrdiff_t>(classes.size())) {
      warn << "warning: " << c.name << " skipped: frames of both classes are needed\n";
      continue;
    }

    const auto n = static_cast<Eigen::Index>(labeled.size());
    Eigen::Array<double, Eigen::Dynamic, kNumAus, Eigen::RowMajor> probs(n, kNumAus);
    for (Eigen::Index i = 0; i < n; ++i) probs.row(i) = labeled[static_cast<std::size_t>(i)].probability;
    const PresenceTable table = presence_ratio(threshold_predictions(probs, config.thresholds.prediction), classes, 2);
    for (int cls = 0; cls < 2; ++cls) {
      for (Eigen::Index k = 0; k < kNumAus; ++k) {
        presence += std::string(c.name) + ',' + c.classes[static_cast<std::size_t>(cls)] + ',' +
                    std::to_string(table.frames[static_cast<std::size_t>(cls)]) + ',' +
                    std::to_string(kAuIds[static_cast<std::size_t>(k)]) + ',' + std::to_string(table.detected(k, cls)) +
                    ',' + io::format_double(table.ratio(k, cls)) + '\n';
      }
    }

    const auto videos = aggregate_by_video(labeled, config.thresholds.prediction, config.association.encoding);
    std::vector<int> predictors;
    for (const int au : passing) {
      const Eigen::Index k = require_au_index(au);
      const bool constant = std::all_of(videos.begin(), videos.end(), [&](const VideoAggregate& v) {
        return v.proportion(k) == videos.front().proportion(k);
      });
      if (constant) {
        warn << "warning: " << c.name << ": AU" << au << " is constant across videos and is left out\n";
      } else {
        predictors.push_back(au);
      }
    }
    if (predictors.empty()) {
      warn << "warning: " << c.name << " skipped: no usable predictors\n";
      continue;
    }
    try {
      const GlmmFit fit = fit_glmm(videos, predictors, config.association.glmm);
      const auto rows = significance_report(fit, config.thresholds.alpha);
      log << c.name << ": " << videos.size() << " videos, " << predictors.size() << " predictors, sigma "
          << io::format_double(fit.sigma) << ", " << fit.iterations << " iterations\n";
      for (const auto& r : rows) {
        report += std::string(c.name) + ',' + std::to_string(r.au) + ',' + io::format_double(r.beta) + ',' +
                  io::format_double(r.se) + ',' + io::format_double(r.p) + ',' + std::to_string(r.sign) + ',' +
                  (r.significant ? "1" : "0") + '\n';
      }
    } catch (const NumericError& e) {
      warn << "warning: " << c.name << " skipped: " << e.what() << '\n';
    } catch (const ValidationError& e) {
      warn << "warning: " << c.name << " skipped: " << e.what() << '\n';
    }
  }
  io::write_file_atomic(out.presence(), presence);
  io::write_file_atomic(out.association(), report);
  log << "wrote " << out.association().string() << '\n';
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Masked multi-dataset AU training and clinical association pipeline", "aumask"};
  std::string config_path, out_dir, checkpoint;
  std::optional<std::uint64_t> seed;
  app.add_option("--config", config_path, "Pipeline config file (JSON)")->required();
  app.add_option("--seed", seed, "Override the config seed");
  app.add_option("--out", out_dir, "Override the output directory");
  app.require_subcommand(1, 1);
  app.fallthrough();

  app.add_subcommand("merge", "Merge dataset manifests over the full AU catalog");
  app.add_subcommand("split", "Subject-disjoint train/test split of the merged manifest");
  app.add_subcommand("align", "Crop and align faces from the landmark manifest");
  app.add_subcommand("train", "Train the classifier with the masked loss");
  app.add_subcommand("eval", "Per-AU F1 and accuracy on the test split")
      ->add_option("--checkpoint", checkpoint, "Checkpoint to evaluate");
  app.add_subcommand("infer", "AU probabilities for every frame in the frame manifest")
      ->add_option("--checkpoint", checkpoint, "Checkpoint to run");
  app.add_subcommand("phenotype", "Label pain, acuity and ABD intervals from EHR events");
  app.add_subcommand("associate", "Presence ratios and mixed-effects fits per clinical contrast");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 1;
  }

  try {
    PipelineConfig config = load_pipeline_config(config_path);
    if (seed) config.set_seed(*seed);
    if (!out_dir.empty()) config.output_dir = out_dir;
    config.validate();

    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "merge") cmd_merge(config, out);
    else if (cmd == "split") cmd_split(config, out);
    else if (cmd == "align") cmd_align(config, out);
    else if (cmd == "train") cmd_train(config, out);
    else if (cmd == "eval") cmd_eval(config, checkpoint, out);
    else if (cmd == "infer") cmd_infer(config, checkpoint, out);
    else if (cmd == "phenotype") cmd_phenotype(config, out);
    else if (cmd == "associate") cmd_associate(config, out, err);
    return 0;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace aumask::cli
