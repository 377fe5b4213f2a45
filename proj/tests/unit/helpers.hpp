#pragma once

#include <unistd.h>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "corpus.hpp"
#include "rng.hpp"

namespace testutil {

inline cb::Post post(std::vector<std::string> tokens, int label, cb::Platform p = cb::Platform::Formspring,
                     std::string id = {}) {
    cb::Post out;
    out.id = std::move(id);
    out.platform = p;
    out.tokens = std::move(tokens);
    out.label = label;
    if (p != cb::Platform::Twitter) out.anonymous = false;
    return out;
}

inline cb::LabeledCorpus corpus(std::vector<cb::Post> posts, cb::Platform p = cb::Platform::Formspring) {
    for (std::size_t i = 0; i < posts.size(); ++i)
        if (posts[i].id.empty()) posts[i].id = "p" + std::to_string(i);
    return cb::LabeledCorpus(p, cb::platform_labels(p), std::move(posts));
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("cbtest-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path write(const std::string& name, const std::string& content) const {
        const auto p = path_ / name;
        std::ofstream(p, std::ios::binary) << content;
        return p;
    }

private:
    std::filesystem::path path_;
};

/// Two-class corpus where class membership is carried by disjoint vocabularies.
inline cb::LabeledCorpus separable_corpus(std::size_t n, std::size_t every, std::uint64_t seed,
                                          cb::Platform p = cb::Platform::Formspring) {
    const std::vector<std::string> good{"nice", "lovely", "day", "happy", "game", "music", "friend", "school"};
    const std::vector<std::string> bad{"stupid", "ugly", "loser", "idiot", "hate", "dumb", "freak", "worthless"};
    cb::Rng rng(seed);
    std::vector<cb::Post> posts;
    const auto labels = cb::platform_labels(p);
    const int none = static_cast<int>(labels.size()) - 1;
    for (std::size_t i = 0; i < n; ++i) {
        const bool b = i % every == 0;
        std::vector<std::string> tokens;
        const std::size_t len = 3 + rng.below(6);
        for (std::size_t k = 0; k < len; ++k) {
            const bool use_bad = b && (k == 0 || rng.uniform() < 0.6);
            tokens.push_back(use_bad ? bad[rng.below(bad.size())] : good[rng.below(good.size())]);
        }
        posts.push_back(post(tokens, b ? 0 : none, p));
    }
    return corpus(std::move(posts), p);
}

inline cb::ad::Tensor random_tensor(cb::ad::Shape shape, cb::Rng& rng, double scale = 1.0) {
    return cb::ad::uniform(std::move(shape), -scale, scale, rng);
}

/// Central-difference gradient of sum(r .* f(inputs)), written independently
/// of the library's checker. Returns the max relative error against the
/// analytic gradients produced by one backward pass.
inline double fd_max_rel_error(const cb::ad::DifferentiableFn& fn, std::vector<cb::ad::Tensor> inputs,
                               std::uint64_t seed, double h = 1e-5) {
    using namespace cb::ad;
    for (auto& t : inputs) t.zero_grad();
    Tape tape;
    Tensor out = fn(tape, inputs);
    std::vector<double> r(out.size());
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (auto& v : r) v = dist(gen);
    out.grad() = r;
    tape.backward_seeded();
    double worst = 0.0;
    for (std::size_t a = 0; a < inputs.size(); ++a) {
        const std::vector<double> analytic = inputs[a].grad();
        for (std::size_t i = 0; i < inputs[a].size(); ++i) {
            const double x0 = inputs[a].values()[i];
            auto eval = [&](double x) {
                inputs[a].values()[i] = x;
                Tape t2;
                const Tensor y = fn(t2, inputs);
                double s = 0.0;
                for (std::size_t k = 0; k < y.size(); ++k) s += r[k] * y.values()[k];
                return s;
            };
            const double numeric = (eval(x0 + h) - eval(x0 - h)) / (2 * h);
            inputs[a].values()[i] = x0;
            const double scale = std::max({std::fabs(analytic[i]), std::fabs(numeric), 1e-2});
            worst = std::max(worst, std::fabs(analytic[i] - numeric) / scale);
        }
    }
    return worst;
}

}  // namespace testutil
