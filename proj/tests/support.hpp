#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <string>

#include "d3t/experiment.hpp"

namespace d3t::test {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("d3t_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    [[nodiscard]] const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

/// A desk-profile config shrunk so a full run takes well under a second.
inline ExperimentConfig tiny_config(Regime regime = Regime::D3T) {
    ExperimentConfig c = desk_profile();
    c.regime = regime;
    c.eval_interval = 20;
    c.data.n_source = 24;
    c.data.n_target = 24;
    c.data.n_test = 8;
    c.trainer.total_iterations = 60;
    c.trainer.burn_in_iterations = 20;
    c.trainer.zigzag.step_length = 20;
    c.trainer.lambda.ramp = LambdaSchedule{25, 10};
    c.trainer.batch_size = 2;
    return c;
}

}  // namespace d3t::test
