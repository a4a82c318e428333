#pragma once

// JSON run configuration. Every key is optional; missing keys take the
// defaults of ExperimentSpec and the structs it embeds. Unknown keys are
// rejected so typos surface as config errors instead of silent defaults.
//
//   {
//     "family": "distill-strategy",
//     "seeds": [1, 2, 3],
//     "output_dir": "out/distill",
//     "threads": 1,
//     "gen": {"dim": 32, "drift_rate": 0.999, "ltv_noise_sigma": 1.0,
//             "conflict_angle": 1.5708, "logit_scale": 2.0,
//             "tasks": [{"name": "CTR", "kind": "binary", "category": "PET"}]},
//     "student": {"trunk": [16, 8], "tower": [], "train": TRAIN},
//     "teacher": {"scale": 2, "scales": [2, 4], "train": TRAIN,
//                 "infer_and_write_every": 1, "label_delay": 0,
//                 "freeze_at": null, "bias_injection": {"LTV": 1.3},
//                 "pretrain_steps": 0},
//     "distill": {"mode": "direct", "tasks": [], "alpha": 1.0, "temperature": 1.0},
//     "students": [{"name": "A", "mode": "auxiliary", "tasks": ["LTV"], "alpha": 1.0}],
//     "schedule": {"total_steps": 400, "batch_size": 256, "eval_every": 100,
//                  "eval_batches": 8, "online_metrics": true,
//                  "durable_store": true, "threads": 1,
//                  "online": {"slate_size": 8, "n_slates": 2000, "policy_task": "CTR",
//                             "engagement_task": "CTR", "satisfaction_task": "SAT"}}
//   }
//
//   TRAIN = {"base_lr": 0.001, "warmup_steps": 0, "activation_clip": null,
//            "clippy": {"sigma_rel": 0.1, "sigma_abs": 0.0} | null,
//            "adam": {"beta1": 0.9, "beta2": 0.999, "epsilon": 1e-8}}

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"

#include "kdrank/experiment.hpp"

namespace kdrank::cli {

struct RunConfig {
  experiment::ExperimentSpec spec;
  std::filesystem::path output_dir = "kdrank-out";
};

// Throws ConfigError "<field path>: <reason>".
RunConfig parse_config(const nlohmann::json& doc);
RunConfig load_config(const std::filesystem::path& path);

// Fully expanded configuration, defaults included. parse_config inverts it.
nlohmann::json to_json(const RunConfig& cfg);

// FNV-1a 64 over the expanded configuration minus fields that cannot change
// results (output_dir, thread counts and durable_store).
std::uint64_t config_hash(const RunConfig& cfg);
std::string hash_hex(std::uint64_t hash);

}  // namespace kdrank::cli
