#pragma once

#include <filesystem>
#include <string>
#include <variant>

#include "lcpred/hmm.hpp"
#include "lcpred/models.hpp"

namespace lcpred {

// versioned JSON container, one file per model, kind-tagged
void save_checkpoint(const std::filesystem::path& path, const LaneSrnnModel& model);
void save_checkpoint(const std::filesystem::path& path, const SingleLstmModel& model);
void save_checkpoint(const std::filesystem::path& path,
                     const SingleFactorSrnnModel& model);
void save_checkpoint(const std::filesystem::path& path, const HmmClassifier& model);

using AnyModel =
    std::variant<LaneSrnnModel, SingleLstmModel, SingleFactorSrnnModel, HmmClassifier>;

AnyModel load_checkpoint(const std::filesystem::path& path);

std::string checkpoint_kind(const AnyModel& model);

Maneuver predict_maneuver(const AnyModel& model, const Sample& sample);

const Standardizer& model_standardizer(const AnyModel& model);
const HorizonConfig& model_horizon(const AnyModel& model);

}  // namespace lcpred
