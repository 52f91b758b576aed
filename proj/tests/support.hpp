#pragma once

#include "finprompt/corpus.hpp"
#include "finprompt/mock_provider.hpp"
#include "finprompt/util.hpp"

#include <filesystem>
#include <unistd.h>
#include <memory>
#include <mutex>
#include <vector>
#include <string>

#include <nlohmann/json.hpp>

namespace test_support {

inline std::string fixture(const std::string& name) { return std::string(FINPROMPT_TEST_DIR) + "/fixtures/" + name; }
inline std::string data_path(const std::string& rel) { return std::string(FINPROMPT_SOURCE_DIR) + "/" + rel; }

inline std::string read_fixture(const std::string& name) { return finprompt::read_file(fixture(name)); }

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("finprompt-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::string file(const std::string& name) const { return (path_ / name).string(); }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

inline std::shared_ptr<finprompt::provider::MockProvider> mock(const nlohmann::json& script) {
    return std::make_shared<finprompt::provider::MockProvider>(finprompt::provider::ScriptedBehavior::from_json(script));
}

// Forwards to another provider and records every request.
class Recording : public finprompt::provider::Provider {
public:
    explicit Recording(std::shared_ptr<finprompt::provider::Provider> inner) : inner_(std::move(inner)) {}

    finprompt::provider::ChatResponse complete(const finprompt::provider::ChatRequest& request) override {
        {
            std::lock_guard<std::mutex> lock(mu_);
            requests_.push_back(request);
        }
        return inner_->complete(request);
    }
    std::string id() const override { return inner_->id(); }

    std::size_t calls() const {
        std::lock_guard<std::mutex> lock(mu_);
        return requests_.size();
    }
    std::vector<finprompt::provider::ChatRequest> requests() const {
        std::lock_guard<std::mutex> lock(mu_);
        return requests_;
    }

private:
    std::shared_ptr<finprompt::provider::Provider> inner_;
    mutable std::mutex mu_;
    std::vector<finprompt::provider::ChatRequest> requests_;
};

inline finprompt::corpus::Example real_example(const std::string& id, const std::string& passage,
                                               const std::string& question, double gold,
                                               std::optional<finprompt::corpus::Subset> subset = std::nullopt) {
    finprompt::corpus::Example e;
    e.id = id;
    e.passage = passage;
    e.question = question;
    e.gold_answer = gold;
    e.subset = subset;
    return e;
}

} // namespace test_support
