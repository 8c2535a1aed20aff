#pragma once

#include <string>
#include <vector>

#include "scb/trainer.hpp"
#include "scb/types.hpp"

namespace scb {

// Versioned document with a sparse per-column encoding of Qmat. "role" tags
// a pretrained transition matrix saved in the same schema.
std::string ground_truth_to_json(const GroundTruth& gt,
                                 const std::string& role = "");
GroundTruth ground_truth_from_json(const std::string& text);

std::string model_params_to_json(const ModelParams& params);
ModelParams model_params_from_json(const std::string& text);

// One sample per line: {"x": [...], "k": int, "o": int}.
std::string samples_to_jsonl(const std::vector<Sample>& samples);
std::vector<Sample> samples_from_jsonl(const std::string& text);

// step,stage,loss_est,alpha_V,alpha_A,delta_V_mu,delta_A_mu,dist_V_mu,
// dist_A_mu,off_support_max
std::string trajectory_to_csv(const std::vector<TrajectoryRow>& rows);

void write_file(const std::string& path, const std::string& content);
std::string read_file(const std::string& path);

}  // namespace scb
