#include "irra/train.hpp"

#include <doctest.h>

#include <vector>

using namespace irra;

namespace {

struct StopTraining {};

constexpr std::size_t kWindow = 20;
constexpr std::size_t kEpochs = 10;

}  // namespace

// Full objective, default config: the 20-step moving average of the total
// loss falls at every step over the first ten epochs.
TEST_CASE("moving average of the total loss decreases early in training") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    CAPTURE(seed);
    Rng data_rng(substream_seed(seed, 77));
    const Dataset ds = generate_synthetic({}, data_rng);
    TrainConfig c;
    c.seed = seed;
    c.schedule.eval_every_epoch = false;
    std::vector<double> totals;
    TrainCallbacks cb;
    cb.on_step = [&](const StepRecord& s) {
      if (s.epoch >= kEpochs) throw StopTraining{};
      totals.push_back(s.total);
    };
    try {
      train_run(ds, c, cb);
    } catch (const StopTraining&) {
    }
    REQUIRE(totals.size() > kWindow);
    std::vector<double> avg;
    for (std::size_t end = kWindow; end <= totals.size(); ++end) {
      double sum = 0.0;
      for (std::size_t i = end - kWindow; i < end; ++i) sum += totals[i];
      avg.push_back(sum / kWindow);
    }
    std::size_t rises = 0;
    for (std::size_t i = 1; i < avg.size(); ++i) rises += !(avg[i] < avg[i - 1]);
    CHECK(rises == 0);
  }
}
