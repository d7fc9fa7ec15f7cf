// One low-resolution observation, two plausible restorations.
//
// The collision prior has two components ("glasses" and "bare") that are
// identical after 8x average pooling. A single 2x2 observation therefore
// admits both; the condition decides which one MCS produces.

#include <cstdio>

#include "mcs/mcs.hpp"

int main() {
  using namespace mcs;
  const GmmPrior prior = make_collision_prior();
  const NoiseSchedule sched = make_default_schedule(150);
  const GmmDenoiser denoiser(prior, sched);

  const LinearOperator pool = avgpool_op(16, 16, 8);
  const ImageGrid y = pool.apply(prior[0].mean);
  const ImageGrid y0 = coarse_restore(y, pool, 1.0);

  const GuidanceConfig cfg;
  for (const char* label : {"glasses", "bare"}) {
    const Condition cond = Condition::of({label});
    int hits = 0;
    const int runs = 20;
    for (int seed = 0; seed < runs; ++seed) {
      CounterRng rng(static_cast<std::uint64_t>(seed));
      const SampleResult r = mcs_sample(denoiser, y0, pool, cond, cfg, sched, rng);
      hits += component_assign(prior, r.x0) == label ? 1 : 0;
    }
    std::printf("condition %-8s -> %d/%d samples assigned to it\n", label, hits, runs);
  }

  int glasses = 0;
  const int runs = 20;
  for (int seed = 0; seed < runs; ++seed) {
    CounterRng rng(static_cast<std::uint64_t>(seed));
    const SampleResult r = mcs_sample(denoiser, y0, pool, Condition::null(), cfg, sched, rng);
    glasses += component_assign(prior, r.x0) == "glasses" ? 1 : 0;
  }
  std::printf("no condition     -> %d glasses, %d bare\n", glasses, runs - glasses);
  return 0;
}
