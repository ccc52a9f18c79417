#include <gtest/gtest.h>

#include "progrow/compute.hpp"

using namespace progrow;

namespace {

double fraction(const std::string& name, std::size_t classes, const std::vector<std::size_t>& epochs) {
  const auto spec = preset(name, classes);
  const auto plan = make_plan(spec.block_count, epochs.size());
  return overall_computation(epochs, make_cost_model(spec, plan, CostMode::ParameterUpdates));
}

// independent oracle: sums per-block counts directly instead of going through prefix_params
double fraction_by_blocks(const BackboneSpec& spec, const std::vector<std::size_t>& epochs) {
  const auto plan = make_plan(spec.block_count, epochs.size());
  double full = static_cast<double>(analytic::stem_params(spec) + analytic::head_params(spec, spec.block_count, HeadKind::Standard));
  for (std::size_t i = 0; i < spec.block_count; ++i) full += static_cast<double>(analytic::block_params(spec, i));
  double spent = 0, total = 0;
  for (std::size_t k = 1; k <= plan.stage_count; ++k) {
    const auto n = plan.active_blocks(k);
    double c = static_cast<double>(analytic::stem_params(spec));
    for (std::size_t i = 0; i < n; ++i) c += static_cast<double>(analytic::block_params(spec, i));
    c += static_cast<double>(analytic::head_params(spec, n, k == plan.stage_count ? HeadKind::Standard : HeadKind::Progressive));
    spent += static_cast<double>(epochs[k - 1]) * c;
    total += static_cast<double>(epochs[k - 1]);
  }
  return spent / (total * full);
}

}  // namespace

struct ScheduleRow {
  std::string preset;
  std::size_t classes;
  std::vector<std::size_t> epochs;
  double reported;
};

class ReportedFraction : public ::testing::TestWithParam<ScheduleRow> {};

TEST_P(ReportedFraction, WithinOneAndAHalfPoints) {
  const auto& row = GetParam();
  const double f = fraction(row.preset, row.classes, row.epochs);
  EXPECT_NEAR(100 * f, row.reported, 1.5) << row.preset;
  EXPECT_NEAR(f, fraction_by_blocks(preset(row.preset, row.classes), row.epochs), 1e-12);
}

INSTANTIATE_TEST_SUITE_P(Reported, ReportedFraction,
                         ::testing::Values(ScheduleRow{"resnet18", 5, {5, 5, 30, 280}, 89.3}, ScheduleRow{"resnet18", 5, {10, 290}, 96.8},
                                           ScheduleRow{"resnet101", 5, {5, 5, 30, 280}, 93.2}, ScheduleRow{"vit-b16", 5, {50, 350}, 93.8},
                                           ScheduleRow{"vit-b16", 10, {3, 22}, 94.1}));

TEST(Compute, SingleStageIsWholeCost) {
  for (const auto& name : preset_names()) EXPECT_DOUBLE_EQ(fraction(name, 5, {17}), 1.0) << name;
}

TEST(Compute, HalfDepthTransformerCostsAboutHalf) {
  const auto spec = preset("vit-b16");
  const auto m = make_cost_model(spec, make_plan(12, 2), CostMode::ParameterUpdates);
  const double r = m.per_stage_cost[0] / m.full_cost;
  EXPECT_GT(r, 0.50);
  EXPECT_LT(r, 0.52);
  EXPECT_DOUBLE_EQ(m.per_stage_cost[1], m.full_cost);
}

TEST(Compute, ShiftingEpochsEarlierReducesCost) {
  for (const auto& name : {"resnet18", "resnet101", "vit-b16"}) {
    double prev = 2.0;
    for (std::size_t early = 0; early <= 40; early += 5) {
      const double f = fraction(name, 5, {early, 40 - early});
      EXPECT_LT(f, prev + 1e-15) << name;
      prev = f;
    }
  }
}

TEST(Compute, FlopsModeMatchesHandCountForTinyTransformer) {
  const auto spec = preset("tiny-vit", 10);
  const double d = 128, t = 65, p = 64, mlp = 256;
  const double stem = p * 3 * 16 * d;
  const double block = t * (4 * d * d + 2 * d * mlp) + 2 * t * t * d;
  const double head = d * 10;
  EXPECT_DOUBLE_EQ(analytic::prefix_forward_macs(spec, 6, HeadKind::Standard), stem + 6 * block + head);
  const auto m = make_cost_model(spec, make_plan(6, 2), CostMode::Flops, HeadKind::Standard, 100);
  EXPECT_DOUBLE_EQ(m.full_cost, 3 * 100 * (stem + 6 * block + head));
  EXPECT_DOUBLE_EQ(m.per_stage_cost[0], 3 * 100 * (stem + 3 * block + head));
  const double f = overall_computation({3, 22}, m);
  EXPECT_NEAR(f, (3 * (stem + 3 * block + head) + 22 * (stem + 6 * block + head)) / (25 * (stem + 6 * block + head)), 1e-12);
}

TEST(Compute, RejectsMalformedSchedules) {
  const auto m = make_cost_model(preset("resnet18"), make_plan(8, 2), CostMode::ParameterUpdates);
  EXPECT_THROW(overall_computation({0, 0}, m), std::invalid_argument);
  EXPECT_THROW(overall_computation({1, 2, 3}, m), std::invalid_argument);
  EXPECT_THROW(parse_cost_mode("wallclock"), std::invalid_argument);
  EXPECT_EQ(parse_cost_mode("flops"), CostMode::Flops);
}
