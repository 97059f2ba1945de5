#include <cmath>

#include "doctest.h"
#include "evoada/attention.hpp"
#include "evoada/backbone.hpp"
#include "evoada/errors.hpp"
#include "evoada/reports.hpp"

using namespace evoada;

namespace {

const char* kHeader =
    R"({"event":"header","schema":"evoada.runlog","version":1,"kind":"search","config_digest":"abc"})";

std::string eval_line(std::size_t gen, std::size_t id, const std::string& codes, const std::string& total,
                      const std::string& status = "active") {
  return R"({"event":"eval","gen":)" + std::to_string(gen) + R"(,"id":)" + std::to_string(id) +
         R"(,"provenance":"init","genome":[)" + codes + R"(],"l_ent":0.1,"l_div":-1,"l_pse":0.2,"total":)" +
         total + R"(,"source_acc":0.9,"pseudo_quality":0.8,"status":")" + status + R"(","age":1})";
}

}  // namespace

TEST_CASE("csv round trip and schema checks") {
  CsvTable t{"evoada.test", kCsvVersion, "d1", {"a", "b"}, {{"1", "x;y"}, {"2", "nan"}}};
  const auto text = write_csv(t);
  CHECK(text.rfind("# evoada.test v1 config_digest=d1\n", 0) == 0);
  const auto back = read_csv(text, "evoada.test");
  CHECK(back.columns == t.columns);
  CHECK(back.rows == t.rows);
  CHECK(back.digest == "d1");

  CHECK_THROWS_AS(read_csv(text, "evoada.other"), FormatError);
  auto v2 = text;
  v2.replace(v2.find(" v1 "), 4, " v2 ");
  CHECK_THROWS_AS(read_csv(v2, "evoada.test"), FormatError);
  CHECK_THROWS_AS(read_csv("a,b\n1,2\n", "evoada.test"), FormatError);
  CHECK_THROWS_AS(read_csv(text + "1,2,3\n", "evoada.test"), FormatError);
}

TEST_CASE("format_number is shortest round trip") {
  CHECK(format_number(0.1) == "0.1");
  CHECK(format_number(std::nan("")) == "nan");
  const double x = 0.1 + 0.2;
  CHECK(std::stod(format_number(x)) == x);
}

TEST_CASE("empty runlog summarizes to zero generations") {
  const auto s = summarize_runlog(std::string(kHeader) + "\n");
  CHECK(s.generations == 0);
  CHECK(s.evaluations == 0);
  CHECK(std::isnan(s.best_total));
  const auto text = render_summary(s, SearchContext{});
  CHECK(text.find("0 generations") != std::string::npos);
  CHECK(summarize_runlog("").generations == 0);
}

TEST_CASE("runlog best equals the minimum over eval lines") {
  std::string log = std::string(kHeader) + "\n";
  log += eval_line(0, 0, "1,0,0,0", "1.5") + "\n";
  log += eval_line(0, 1, "0,2,0,0", "0.75") + "\n";
  log += eval_line(1, 0, "1,0,0,0", "1.25", "dropped(poor-pseudo)") + "\n";
  log += eval_line(1, 2, "0,0,3,0", "null", "dropped(diverged)") + "\n";
  log += eval_line(2, 3, "0,0,0,4", "0.5") + "\n";
  log += R"({"event":"note","gen":2,"message":"x"})" "\n";
  const auto s = summarize_runlog(log);
  CHECK(s.kind == "search");
  CHECK(s.digest == "abc");
  CHECK(s.generations == 3);
  CHECK(s.evaluations == 5);
  CHECK(s.best_total == 0.5);
  REQUIRE(s.curve.size() == 3);
  CHECK(s.curve[0].second == 0.75);
  CHECK(s.curve[1].second == 0.75);
  CHECK(s.curve[2].second == 0.5);
  REQUIRE(!s.best.empty());
  CHECK(s.best.front().first == std::vector<std::uint32_t>{0, 0, 0, 4});
  CHECK(s.status_counts.at("dropped(diverged)") == 1);
}

TEST_CASE("malformed runlogs are rejected with a line number") {
  std::string log = std::string(kHeader) + "\n{not json\n";
  try {
    summarize_runlog(log);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  CHECK_THROWS_AS(summarize_runlog(eval_line(0, 0, "0,0,0,0", "1") + "\n"), FormatError);
  std::string v9 = kHeader;
  v9.replace(v9.find("\"version\":1"), 11, "\"version\":9");
  CHECK_THROWS_AS(summarize_runlog(v9 + "\n"), FormatError);
}

TEST_CASE("single SE genome reports the module's params and FLOPs") {
  SearchContext ctx;
  AttentionGenome g = AttentionGenome::all_identity(ctx.space.num_slots);
  g.slots[1] = SlotGene{AttentionKind::SE, 1, 0};
  const auto codes = encode(g, ctx.space);
  std::string log = std::string(kHeader) + "\n" +
                    eval_line(0, 0,
                              std::to_string(codes[0]) + "," + std::to_string(codes[1]) + "," +
                                  std::to_string(codes[2]) + "," + std::to_string(codes[3]),
                              "0.5") +
                    "\n";
  const auto text = render_summary(summarize_runlog(log), ctx);

  const auto site = ctx.spec.slot_sites()[1];
  const auto flops = attention_flops(AttentionKind::SE, site.channels, ctx.space.widths[1], ctx.space.groups[0],
                                     site.height, site.width);
  const auto params = attention_parameter_count(ctx.spec, ctx.space, g);
  CHECK(params > 0);
  CHECK(text.find("params +" + std::to_string(params) + "  FLOPs +" + std::to_string(flops)) !=
        std::string::npos);
}

TEST_CASE("svg charts") {
  const auto h = svg_histogram({0.2, 0.3, 0.35, 0.9}, 0.5, 5, "t", "acc");
  CHECK(h.rfind("<svg", 0) == 0);
  CHECK(h.find("class=\"baseline\"") != std::string::npos);
  CHECK(h.find("stroke-dasharray") != std::string::npos);
  CHECK(h.find("</svg>") != std::string::npos);

  const auto l = svg_line_chart("a<b", "x", "y", {{"s1", {{0, 1}, {1, 0.5}}}, {"s2", {}}});
  CHECK(l.find("a&lt;b") != std::string::npos);
  CHECK(l.find("<polyline") != std::string::npos);
  // NaN points are skipped rather than written
  const auto n = svg_line_chart("t", "x", "y", {{"s", {{0, std::nan("")}, {1, 1}}}});
  CHECK(n.find("nan") == std::string::npos);
}
