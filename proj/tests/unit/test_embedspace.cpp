#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "embedspace.hpp"
#include "error.hpp"
#include "helpers.hpp"

using namespace cb;

namespace {

Vocabulary words(std::size_t n) {
    std::vector<std::string> w;
    for (std::size_t i = 0; i < n; ++i) w.push_back("w" + std::to_string(i));
    return Vocabulary(w);
}

/// Exhaustive ranking: normalize every row first, then sort all pairs by dot product.
std::vector<std::size_t> brute_force(const EmbeddingMatrix& E, std::size_t q, std::size_t k) {
    std::vector<std::vector<double>> unit(E.size());
    for (std::size_t i = 0; i < E.size(); ++i) {
        double n = 0;
        for (double v : E.row(i)) n += v * v;
        n = std::sqrt(n);
        for (double v : E.row(i)) unit[i].push_back(n > 0 ? v / n : 0.0);
    }
    std::vector<std::pair<double, std::size_t>> scored;
    for (std::size_t i = 2; i < E.size(); ++i) {
        if (i == q) continue;
        double s = 0;
        for (std::size_t j = 0; j < E.dim; ++j) s += unit[q][j] * unit[i][j];
        scored.emplace_back(-s, i);
    }
    std::sort(scored.begin(), scored.end());
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < std::min(k, scored.size()); ++i) out.push_back(scored[i].second);
    return out;
}

double dist(const std::array<double, 2>& a, const std::array<double, 2>& b) {
    return std::hypot(a[0] - b[0], a[1] - b[1]);
}

}  // namespace

TEST_CASE("init_random") {
    const Vocabulary v = words(10);
    const auto a = init_random(v, 50, 3), b = init_random(v, 50, 3);
    CHECK(a.rows == b.rows);
    CHECK(a.rows.size() == v.size() * 50);
    for (double x : a.row(0)) CHECK(x == 0.0);
    for (double x : a.rows) CHECK(std::abs(x) <= 0.05);
    CHECK(init_random(v, 50, 4).rows != a.rows);
    CHECK_THROWS_AS(init_random(v, 0, 1), UsageError);
}

TEST_CASE("load_pretrained") {
    testutil::TempDir dir;
    const Vocabulary v(std::vector<std::string>{"the", "cat", "sat"});
    const auto full = dir.write("full.txt", "the 0.1 0.2 -0.3\ncat 1e-3 2 3\nsat 0.123456789012345 0 -7\ndog 9 9 9\n");
    const auto loaded = load_pretrained(full, v, 3, 1);
    CHECK(loaded.coverage == 1.0);
    CHECK(loaded.matrix.row(static_cast<std::size_t>(v.index_of("cat")))[0] == 1e-3);
    CHECK(loaded.matrix.row(static_cast<std::size_t>(v.index_of("sat")))[0] == 0.123456789012345);
    CHECK(loaded.matrix.row(static_cast<std::size_t>(v.index_of("the")))[2] == -0.3);

    const auto none = load_pretrained(dir.write("none.txt", "dog 1 2 3\n"), v, 3, 1);
    CHECK(none.coverage == 0.0);
    CHECK(none.matrix.rows == init_random(v, 3, 1).rows);

    const auto partial = load_pretrained(dir.write("part.txt", "cat 1 2 3\n"), v, 3, 1);
    CHECK(partial.coverage == doctest::Approx(1.0 / 3));

    std::string what;
    try {
        load_pretrained(dir.write("bad.txt", "cat 1 2 3\nthe 0.1\n"), v, 3, 1);
    } catch (const DataError& e) {
        what = e.what();
    }
    CHECK(what.find("line 2") != std::string::npos);
    CHECK_THROWS_AS(load_pretrained(dir.path() / "absent.txt", v, 3, 1), DataError);
}

TEST_CASE("nearest neighbors: identical rows") {
    EmbeddingMatrix E = init_random(words(5), 4, 2);
    const auto u = static_cast<std::size_t>(E.vocabulary.index_of("w1"));
    const auto w = static_cast<std::size_t>(E.vocabulary.index_of("w3"));
    std::copy(E.row(u).begin(), E.row(u).end(), E.row(w).begin());
    const auto n = nearest_neighbors(E, "w1", 3);
    REQUIRE(n.size() == 3);
    CHECK(n[0].word == "w3");
    CHECK(n[0].similarity == doctest::Approx(1.0).epsilon(1e-12));
    CHECK_THROWS_AS(nearest_neighbors(E, "nope", 3), UsageError);
    CHECK_THROWS_AS(nearest_neighbors(E, "<pad>", 3), UsageError);
    for (const auto& x : nearest_neighbors(E, "w0", 100)) {
        CHECK(x.word != "w0");
        CHECK(x.index >= 2);
    }
}

TEST_CASE("nearest neighbors match an exhaustive oracle") {
    Rng rng(17);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t V = 3 + rng.below(trial < 90 ? 60 : 1000);
        EmbeddingMatrix E = init_random(words(V), 1 + rng.below(8), static_cast<std::uint64_t>(trial));
        const std::size_t q = 2 + rng.below(V);
        const std::size_t k = 1 + rng.below(12);
        const auto got = nearest_neighbors(E, E.vocabulary.word(q), k);
        const auto want = brute_force(E, q, k);
        REQUIRE(got.size() == want.size());
        for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i].index == want[i]);
    }
}

TEST_CASE("t-SNE separates two far pairs") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        Rng rng(seed * 101);
        std::vector<double> pts;
        for (int p = 0; p < 4; ++p) {
            const double centre = p < 2 ? 0.0 : 10.0;
            for (int j = 0; j < 50; ++j) pts.push_back(centre + rng.uniform(-0.1, 0.1));
        }
        TsneOptions opt;
        opt.perplexity = 1.2;
        opt.iterations = 500;
        // affinities scale as 1/N, so four points need a far smaller step than the default
        opt.learning_rate = 0.5;
        const auto proj = tsne_project(pts, 50, {"a", "b", "c", "d"}, opt, seed);
        REQUIRE(proj.coords.size() == 4);
        const double within = std::max(dist(proj.coords[0], proj.coords[1]), dist(proj.coords[2], proj.coords[3]));
        double between = 1e300;
        for (int i : {0, 1})
            for (int j : {2, 3}) between = std::min(between, dist(proj.coords[i], proj.coords[j]));
        CHECK(within < between);
    }
}

TEST_CASE("t-SNE optimization and determinism") {
    Rng rng(5);
    std::vector<double> pts;
    std::vector<std::string> names;
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 12; ++i) {
            names.push_back("p" + std::to_string(c * 12 + i));
            for (int j = 0; j < 10; ++j) pts.push_back(5.0 * c * (j == c) + rng.normal());
        }
    TsneOptions opt;
    opt.perplexity = 5;
    opt.iterations = 600;
    const auto a = tsne_project(pts, 10, names, opt, 9);
    CHECK(a.kl_trace.size() == 600);
    for (std::size_t i = static_cast<std::size_t>(opt.exaggeration_iterations); i + 50 < a.kl_trace.size(); ++i)
        CHECK(a.kl_trace[i + 50] <= a.kl_trace[i] + 1e-3);
    for (double kl : a.kl_trace) CHECK(kl >= -1e-12);
    const auto b = tsne_project(pts, 10, names, opt, 9);
    CHECK(a.coords == b.coords);

    opt.perplexity = 12;
    CHECK_THROWS_AS(tsne_project(pts, 10, names, opt, 9), UsageError);
    CHECK_THROWS_AS(tsne_project(pts, 7, names, TsneOptions{}, 9), UsageError);

    std::istringstream in(format_projection(a));
    std::string line;
    std::getline(in, line);
    std::size_t rows = 0;
    while (std::getline(in, line)) rows += !line.empty();
    CHECK(rows == names.size());
}
