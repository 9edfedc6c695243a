#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "evnet/dataset.hpp"
#include "evnet/explain.hpp"
#include "evnet/trainer.hpp"

namespace evnet {

using Json = nlohmann::ordered_json;

inline constexpr const char* kCheckpointVersion = "evnet-ckpt/1";
inline constexpr const char* kReportVersion = "evnet-report/1";

// Everything needed to embed new data or resume training.
struct Checkpoint {
  TrainerState state;
  std::vector<std::string> feature_names;
  std::optional<std::string> label_name;
  std::optional<NormalizationStats> normalization;
};

Checkpoint make_checkpoint(TrainerState state, const Dataset& prepared);

// `threads` is left out: it never changes results.
Json to_json(const TrainConfig& cfg);
// Missing keys keep their defaults; unknown keys and wrong types are
// rejected with the offending key in the message.
TrainConfig train_config_from_json(const Json& j, TrainConfig base = {});

Json to_json(const TrainReport& report, bool with_wall_time = false);
TrainReport train_report_from_json(const Json& j);

Json to_json(const NormalizationStats& stats);
NormalizationStats normalization_from_json(const Json& j);

Json to_json(const ModelParams& params);
ModelParams model_params_from_json(const Json& j);

Json to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const Json& j);

std::string checkpoint_to_string(const Checkpoint& ckpt);
Checkpoint checkpoint_from_string(const std::string& text);

// Atomic: writes a sibling temp file, then renames it over `path`.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

void write_text_atomic(const std::string& path, const std::string& text);
std::string read_text(const std::string& path);

// Reports below carry a "version" field of kReportVersion.
Json to_json(const ImportanceReport& report);
Json to_json(const ClusterModel& model, bool with_assignments = true);
ClusterModel cluster_model_from_json(const Json& j);

struct MetricRecord {
  std::string metric;  // "rre", "clf" or "clu"
  double value = 0.0;
  std::size_t k_or_folds = 0;
  std::uint64_t seed = 0;
};

Json to_json(const MetricRecord& m);

// Applies the checkpoint's normalization and builds the kNN graph its
// config asks for, so augmentations match training.
Dataset prepare_for_model(const Dataset& raw, const Checkpoint& ckpt, std::size_t threads = 1);

// Reads the optional "repeats", "seed" and "average_all" keys; augmentation
// settings come from the training config.
ExplainOptions explain_options_from_json(const Json& request, const TrainConfig& cfg, std::size_t threads = 1);

// Parses JSON, mapping syntax errors to ErrorCode::kFormat.
Json parse_json(const std::string& text, const std::string& what);

}  // namespace evnet
