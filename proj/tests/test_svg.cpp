#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "driftlab/svg.hpp"

using namespace driftlab;
using namespace driftlab::svg;

namespace {

std::size_t count(const std::string& s, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = s.find(needle); p != std::string::npos; p = s.find(needle, p + 1)) ++n;
  return n;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// small fixed plot used for the golden file
std::string golden_plot() {
  PlotSpec spec;
  spec.title = "forgetting vs lr";
  spec.x_label = "lr";
  spec.y_label = "forgetting";
  spec.log_x = true;
  std::vector<Series> s{{"seed=0", {0.01, 0.1, 1.0}, {0.6, 0.7, 0.9}},
                        {"seed=1", {0.01, 0.1, 1.0}, {0.55, 0.72, 0.8}}};
  return render(spec, s);
}

}  // namespace

TEST(Svg, EmptyInputSaysNoData) {
  const auto out = render(PlotSpec{}, {});
  EXPECT_NE(out.find("no data"), std::string::npos);
  EXPECT_EQ(count(out, "<circle"), 0u);
  const auto empty_series = render(PlotSpec{}, {Series{"a", {}, {}}});
  EXPECT_NE(empty_series.find("no data"), std::string::npos);
}

TEST(Svg, SinglePointHasOneMarker) {
  const auto out = render(PlotSpec{}, {Series{"a", {1.0}, {2.0}}});
  EXPECT_EQ(count(out, "<circle"), 1u);
  EXPECT_EQ(count(out, "<polyline"), 0u);
  EXPECT_EQ(out.find("nan"), std::string::npos);
}

TEST(Svg, NonFiniteValuesAreSkipped) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const auto out = render(PlotSpec{}, {Series{"a", {1.0, 2.0, 3.0}, {1.0, nan, 3.0}}});
  EXPECT_EQ(count(out, "<circle"), 2u);
}

TEST(Svg, RejectsBadInput) {
  EXPECT_THROW(render(PlotSpec{}, {Series{"a", {1.0}, {}}}), ShapeError);
  PlotSpec log;
  log.log_x = true;
  EXPECT_THROW(render(log, {Series{"a", {0.0}, {1.0}}}), ArgumentError);
  EXPECT_THROW(plot_kind_from_string("bar"), ArgumentError);
}

TEST(Svg, EscapesText) {
  PlotSpec spec;
  spec.title = "a<b & \"c\"";
  const auto out = render(spec, {});
  EXPECT_NE(out.find("a&lt;b &amp; &quot;c&quot;"), std::string::npos);
}

TEST(Svg, MatchesGoldenFile) {
  const auto path = std::filesystem::path(DRIFTLAB_SOURCE_DIR) / "tests/golden/forgetting.svg";
  ASSERT_TRUE(std::filesystem::exists(path)) << path;
  EXPECT_EQ(golden_plot(), slurp(path));
  EXPECT_EQ(golden_plot(), golden_plot());
}

TEST(Svg, SeriesFromJsonlGroupsAndSorts) {
  std::vector<nlohmann::json> rows{{{"lr", 0.1}, {"f", 2.0}, {"seed", 0}},
                                   {{"lr", 0.01}, {"f", 1.0}, {"seed", 0}},
                                   {{"lr", 0.01}, {"f", 3.0}, {"seed", 1}}};
  const auto s = series_from_jsonl(rows, "lr", "f", "seed", "runs");
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].name, "seed=0");
  EXPECT_EQ(s[0].x, (std::vector<double>{0.01, 0.1}));
  EXPECT_EQ(s[0].y, (std::vector<double>{1.0, 2.0}));
  const auto indexed = series_from_jsonl({{{"mpa", {0.5, 0.25}}, {"step", 3}}}, "step", "mpa[1]",
                                         "", "r");
  EXPECT_EQ(indexed[0].y[0], 0.25);
}

TEST(Svg, SchemaErrorsNameTheLine) {
  std::vector<nlohmann::json> rows{{{"lr", 0.1}, {"f", 2.0}}, {{"lr", 0.2}}};
  try {
    series_from_jsonl(rows, "lr", "f", "", "runs.jsonl");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("runs.jsonl:2"), std::string::npos) << e.what();
  }
  exp::CsvTable t{{"x", "y"}, {{"1", "2"}, {"2", "abc"}}};
  try {
    series_from_csv(t, "x", "y", "", "t.csv");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("t.csv:4"), std::string::npos) << e.what();
  }
}
