#include "oracles.hpp"

#include "irra/errors.hpp"
#include "irra/metrics.hpp"
#include "irra/nn.hpp"

#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <numeric>

using namespace irra;

namespace {

struct Instance {
  RowMatrix sim;
  std::vector<std::size_t> qids, gids;
};

// Q, G <= 20; every query identity appears in the gallery. Half of the
// instances draw scores from a coarse grid so that ties are common.
Instance random_instance(Rng& rng) {
  std::uniform_int_distribution<std::size_t> size(1, 20);
  const std::size_t q = size(rng), g = size(rng);
  std::uniform_int_distribution<std::size_t> label(0, std::max<std::size_t>(1, g / 3));
  Instance in;
  for (std::size_t j = 0; j < g; ++j) in.gids.push_back(label(rng));
  std::uniform_int_distribution<std::size_t> pick(0, g - 1);
  for (std::size_t i = 0; i < q; ++i) in.qids.push_back(in.gids[pick(rng)]);
  in.sim.resize(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(g));
  const bool coarse = rng() % 2 == 0;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_int_distribution<int> grid(-3, 3);
  for (Eigen::Index i = 0; i < in.sim.size(); ++i) in.sim.data()[i] = coarse ? grid(rng) / 4.0 : u(rng);
  return in;
}

RowMatrix one_row(std::initializer_list<double> v) {
  RowMatrix m(1, static_cast<Eigen::Index>(v.size()));
  std::copy(v.begin(), v.end(), m.data());
  return m;
}

}  // namespace

TEST_CASE("rank_gallery sorts by descending score") {
  const std::vector<double> s{0.1, 0.9, 0.5};
  CHECK(rank_gallery(s) == std::vector<std::size_t>{1, 2, 0});
}

TEST_CASE("rank_gallery keeps index order on ties") {
  const std::vector<double> s(6, 0.25);
  std::vector<std::size_t> want(6);
  std::iota(want.begin(), want.end(), 0);
  CHECK(rank_gallery(s) == want);
}

TEST_CASE("rank_gallery agrees with a full sort") {
  Rng rng(1);
  std::uniform_int_distribution<int> grid(0, 5);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> s(15);
    for (auto& v : s) v = grid(rng);
    std::vector<std::pair<double, std::size_t>> keyed;
    for (std::size_t i = 0; i < s.size(); ++i) keyed.emplace_back(-s[i], i);
    std::sort(keyed.begin(), keyed.end());
    std::vector<std::size_t> want;
    for (const auto& k : keyed) want.push_back(k.second);
    CHECK(rank_gallery(s) == want);
  }
}

TEST_CASE("perfect retrieval scores one everywhere") {
  RowMatrix sim(2, 4);
  sim << 0.9, 0.8, 0.1, 0.0, 0.1, 0.2, 0.9, 0.7;
  const std::vector<std::size_t> q{0, 1}, g{0, 0, 1, 1};
  const auto r = evaluate(sim, q, g);
  CHECK(r.rank(1) == 1.0);
  CHECK(r.mean_ap == 1.0);
  CHECK(r.mean_inp == 1.0);
}

TEST_CASE("relevance pattern 0,1,0,1 gives AP and INP of one half") {
  const RowMatrix sim = one_row({0.9, 0.8, 0.7, 0.6});
  const std::vector<std::size_t> q{1}, g{0, 1, 0, 1};
  const auto r = evaluate(sim, q, g);
  CHECK(r.mean_ap == 0.5);
  CHECK(r.mean_inp == 0.5);
  CHECK(r.rank(1) == 0.0);
  CHECK(r.rank(5) == 1.0);
  REQUIRE(r.per_query.size() == 1);
  CHECK(r.per_query[0].relevant == std::vector<bool>{false, true, false, true});
}

TEST_CASE("single relevant item at rank three of five") {
  const RowMatrix sim = one_row({0.3, 0.4, 0.5, 0.9, 0.8});
  const std::vector<std::size_t> q{7}, g{1, 2, 7, 3, 4};
  const auto r = evaluate(sim, q, g);
  CHECK(r.rank(1) == 0.0);
  CHECK(r.rank(5) == 1.0);
  CHECK(r.mean_ap == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(r.mean_inp == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("a query without relevant items is named in the error") {
  RowMatrix sim(2, 2);
  sim.setZero();
  const std::vector<std::size_t> q{0, 5}, g{0, 1};
  try {
    evaluate(sim, q, g);
    FAIL("expected ContractError");
  } catch (const ContractError& e) {
    CHECK(std::string(e.what()).find("query 1") != std::string::npos);
  }
}

TEST_CASE("evaluate agrees exactly with the definition oracle") {
  Rng rng(2);
  const std::vector<std::size_t> ks{1, 5, 10};
  for (int t = 0; t < 300; ++t) {
    const auto in = random_instance(rng);
    const auto got = evaluate(in.sim, in.qids, in.gids, ks);
    const auto want = oracle::retrieval(in.sim, in.qids, in.gids, ks);
    CHECK(got.rank_k == want.rank_k);
    CHECK(got.mean_ap == want.mean_ap);
    CHECK(got.mean_inp == want.mean_inp);
    const auto ref = evaluate_reference(in.sim, in.qids, in.gids, ks);
    CHECK(ref.mean_ap == want.mean_ap);
    CHECK(ref.mean_inp == want.mean_inp);
  }
}

TEST_CASE("report invariants hold on random instances") {
  Rng rng(3);
  const std::vector<std::size_t> ks{1, 2, 5, 10, 20};
  for (int t = 0; t < 200; ++t) {
    const auto in = random_instance(rng);
    const auto r = evaluate(in.sim, in.qids, in.gids, ks);
    for (std::size_t k = 1; k < ks.size(); ++k) CHECK(r.rank_k[k - 1] <= r.rank_k[k]);
    for (double v : r.rank_k) CHECK((v >= 0.0 && v <= 1.0));
    CHECK(r.mean_ap <= 1.0);
    CHECK(r.mean_inp <= 1.0);
    CHECK(r.mean_inp > 0.0);
    for (std::size_t q = 0; q < r.per_query.size(); ++q) {
      const auto& pq = r.per_query[q];
      const auto relevant = static_cast<std::size_t>(std::count(pq.relevant.begin(), pq.relevant.end(), true));
      // INP is at least |G_q| / |G|, reached when the last relevant item is ranked last.
      CHECK(pq.inverse_negative_penalty >= double(relevant) / double(in.gids.size()) - 1e-15);
      // A single relevant item makes INP and AP the same number.
      if (relevant == 1) CHECK(pq.inverse_negative_penalty == pq.average_precision);
    }
  }
}

TEST_CASE("INP can exceed AP") {
  // Relevance [0,1,1]: AP = (1/2 + 2/3) / 2 = 7/12, INP = 2/3.
  const RowMatrix sim = one_row({0.9, 0.8, 0.7});
  const std::vector<std::size_t> q{1}, g{0, 1, 1};
  const auto r = evaluate(sim, q, g);
  CHECK(r.mean_ap == doctest::Approx(7.0 / 12.0).epsilon(1e-15));
  CHECK(r.mean_inp == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(r.mean_inp > r.mean_ap);
}

TEST_CASE("shifting a whole row leaves the report unchanged") {
  Rng rng(4);
  for (int t = 0; t < 100; ++t) {
    auto in = random_instance(rng);
    // Quarter-grid scores plus a dyadic shift stay exact in binary.
    for (Eigen::Index i = 0; i < in.sim.size(); ++i) in.sim.data()[i] = std::round(in.sim.data()[i] * 4) / 4;
    const auto base = evaluate(in.sim, in.qids, in.gids);
    RowMatrix shifted = in.sim;
    shifted.row(0).array() += 2.5;
    const auto r = evaluate(shifted, in.qids, in.gids);
    CHECK(r.rank_k == base.rank_k);
    CHECK(r.mean_ap == base.mean_ap);
    CHECK(r.mean_inp == base.mean_inp);
  }
}

TEST_CASE("rank() rejects a cutoff that was not evaluated") {
  const RowMatrix sim = one_row({1.0});
  const std::vector<std::size_t> q{0}, g{0};
  CHECK_THROWS_AS(evaluate(sim, q, g).rank(3), IndexError);
}

TEST_CASE("similarity CSV round-trips exactly") {
  Rng rng(5);
  const auto in = random_instance(rng);
  const SimilarityTable t{in.sim, in.qids, in.gids};
  const auto back = similarity_from_csv(similarity_to_csv(t));
  CHECK(back.scores == t.scores);
  CHECK(back.query_ids == t.query_ids);
  CHECK(back.gallery_ids == t.gallery_ids);
}

TEST_CASE("malformed similarity CSV names the line") {
  try {
    similarity_from_csv("query_id,0,1\n0,0.5,0.25\n1,0.5,abc\n");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  CHECK_THROWS_AS(similarity_from_csv("query_id,0,1\n0,0.5\n"), ParseError);
  CHECK_THROWS_AS(load_similarity_csv("/nonexistent/sim.csv"), IoError);
}

TEST_CASE("embedding files round-trip and give cosine similarities") {
  const auto dir = std::filesystem::temp_directory_path() / "irra_metrics_test";
  std::filesystem::create_directories(dir);
  EmbeddingSet q{RowMatrix(2, 2), {3, 4}};
  q.embeddings << 2, 0, 0, 5;
  EmbeddingSet g{RowMatrix(3, 2), {4, 3, 3}};
  g.embeddings << 0, 1, 3, 0, 1, 1;
  save_embeddings(dir / "q.bin", q);
  save_embeddings(dir / "g.bin", g);
  const auto lq = load_embeddings(dir / "q.bin");
  CHECK(lq.embeddings == q.embeddings);
  CHECK(lq.ids == q.ids);
  const auto t = similarity_from_embeddings(lq, load_embeddings(dir / "g.bin"));
  CHECK(t.scores(0, 1) == 1.0);
  CHECK(t.scores(1, 0) == 1.0);
  CHECK(t.scores(0, 0) == 0.0);
  CHECK(t.scores(0, 2) == doctest::Approx(std::sqrt(0.5)));
  CHECK(t.gallery_ids == g.ids);
  std::filesystem::remove_all(dir);
}
