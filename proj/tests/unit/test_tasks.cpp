#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "cory/errors.hpp"
#include "cory/tasks.hpp"

using namespace cory;

namespace {

std::filesystem::path write_temp(const std::string& name, const std::string& text) {
  const auto p = std::filesystem::temp_directory_path() / name;
  std::ofstream(p) << text;
  return p;
}

TokenSeq action_of(const std::string& text, const Vocab& v, std::size_t cap = 8) {
  return TokenSeq(tokenize(text, v), cap, v.pad_id(), v.eos_id());
}


}  // namespace

TEST_CASE("arithmetic vocabulary layout") {
  const auto v = arithmetic_vocab();
  CHECK(v.size() == 20);
  CHECK(v.pad_id() == 0);
  CHECK(v.eos_id() == 1);
  CHECK(v.sep_id() == 2);
  CHECK(is_digit_token(v.id("7"), v));
  CHECK_FALSE(is_digit_token(v.id("+"), v));
  CHECK_FALSE(is_digit_token(v.eos_id(), v));
  CHECK_FALSE(is_digit_token(99, v));
  CHECK(number_tokens(42, v) == std::vector<TokenId>{v.id("4"), v.id("2")});
}

TEST_CASE("lexicon score examples") {
  const auto v = sentiment_vocab();
  const auto lex = default_lexicon(v);
  CHECK(lexicon_score(action_of("great fun <eos>", v), lex) == doctest::Approx(1.0));
  CHECK(lexicon_score(action_of("good the", v), lex) == doctest::Approx(0.25));
  CHECK(lexicon_score(action_of("bad awful boring", v), lex) == doctest::Approx(-1.0));
  CHECK(lexicon_score(action_of("the movie was", v), lex) == 0.0);
  CHECK(lexicon_score(action_of("<eos>", v), lex) == 0.0);
  Lexicon heavy{{v.id("good"), 5.0}};
  CHECK(lexicon_score(action_of("good", v), heavy) == 1.0);  // clamped
}

TEST_CASE("extract_and_match examples") {
  const auto v = arithmetic_vocab();
  const auto seven = number_tokens(7, v);
  CHECK(extract_and_match(action_of("7 <eos>", v), seven, v) == 1.0);
  CHECK(extract_and_match(action_of("a 3 + 4 = 7", v), seven, v) == 1.0);
  CHECK(extract_and_match(action_of("7 a 8", v), seven, v) == 0.0);
  CHECK(extract_and_match(action_of("1 7", v), seven, v) == 0.0);
  CHECK(extract_and_match(action_of("a b <eos>", v), seven, v) == 0.0);
  CHECK(extract_and_match(action_of("1 2", v), number_tokens(12, v), v) == 1.0);
  CHECK(extract_last_number(tokenize("1 a 2 3 b", v), v) == tokenize("2 3", v));
  CHECK(extract_last_number(tokenize("a b", v), v).empty());
}

TEST_CASE("property: appending non-digit tokens never changes the extracted number") {
  const auto v = arithmetic_vocab();
  Rng rng = make_rng(12, {});
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<TokenId> ids;
    const std::size_t n = 1 + uniform_index(rng, 5);
    for (std::size_t i = 0; i < n; ++i) ids.push_back(static_cast<TokenId>(3 + uniform_index(rng, 17)));
    const auto before = extract_last_number(ids, v);
    auto extended = ids;
    extended.push_back(v.id("a"));
    extended.push_back(v.id("="));
    CHECK(extract_last_number(extended, v) == before);
  }
}

TEST_CASE("difficulty levels produce well-formed instances") {
  const auto v = arithmetic_vocab();
  for (int d = 1; d <= 3; ++d) {
    const auto task = make_arithmetic_task(d);
    Rng rng = make_rng(static_cast<std::uint64_t>(d), {});
    for (int i = 0; i < 200; ++i) {
      const auto q = task.sample_query(rng);
      const auto text = detokenize(q.prompt.real(), v);
      const auto plus = text.find(" + "), eq = text.find(" =");
      REQUIRE(plus != std::string::npos);
      REQUIRE(eq != std::string::npos);
      auto digits = [](std::string s) {
        s.erase(std::remove(s.begin(), s.end(), ' '), s.end());
        return std::stoi(s);
      };
      const int a = digits(text.substr(0, plus)), b = digits(text.substr(plus + 3, eq - plus - 3));
      CHECK(q.truth == number_tokens(a + b, v));
      if (d == 1) CHECK(a + b <= 9);
      if (d == 2) CHECK((a <= 9 && b <= 9));
      if (d == 3) CHECK((a >= 10 && a <= 99 && b >= 10 && b <= 99));
      CHECK(q.prompt.real_len() <= task.max_prompt_len);
    }
  }
  CHECK_THROWS_AS(make_arithmetic_task(4), ConfigError);
}

TEST_CASE("difficulty 1 draws the 55 pairs uniformly") {
  const auto task = make_arithmetic_task(1);
  const auto all = task.eval_queries(0, 0);
  CHECK(all.size() == 55);
  std::map<std::vector<TokenId>, int> counts;
  for (const auto& q : all) counts[std::vector<TokenId>(q.prompt.real().begin(), q.prompt.real().end())] = 0;
  REQUIRE(counts.size() == 55);
  Rng rng = make_rng(31, {});
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const auto q = task.sample_query(rng);
    auto it = counts.find(std::vector<TokenId>(q.prompt.real().begin(), q.prompt.real().end()));
    REQUIRE(it != counts.end());
    ++it->second;
  }
  const double p = 1.0 / 55, expect = n * p, sigma = std::sqrt(n * p * (1 - p));
  double chi2 = 0.0;
  for (const auto& [_, c] : counts) {
    CHECK(std::abs(c - expect) <= 4.0 * sigma);
    chi2 += (c - expect) * (c - expect) / expect;
  }
  CHECK(chi2 < 95.0);  // 54 degrees of freedom, p ~ 0.0005
}

TEST_CASE("an oracle responder scores 1 on every evaluation query") {
  for (int d = 1; d <= 3; ++d) {
    const auto task = make_arithmetic_task(d);
    for (const auto& q : task.eval_queries(50, 7)) {
      std::vector<TokenId> ids = q.truth;
      ids.push_back(task.vocab.eos_id());
      CHECK(task.reward(q, TokenSeq(ids, task.max_action_len, 0, 1)) == 1.0);
    }
  }
}

TEST_CASE("evaluation sets are deterministic") {
  const auto task = make_sentiment_task();
  const auto a = task.eval_queries(20, 4), b = task.eval_queries(20, 4);
  REQUIRE(a.size() == 20);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].prompt == b[i].prompt);
}

TEST_CASE("corpus loading") {
  const auto v = arithmetic_vocab();
  const auto ok = write_temp("cory_corpus_ok.txt", "1 + 2 =\t3\n\n4 + 4 =\t8\n");
  const auto qs = load_corpus(ok, v, 4, true);
  REQUIRE(qs.size() == 2);
  CHECK(qs[1].truth == number_tokens(8, v));
  CHECK(detokenize(qs[0].prompt.real(), v) == "1 + 2 =");

  const auto bad = write_temp("cory_corpus_bad.txt", "1 + 2 =\t3\n1 + zz =\t3\n");
  try {
    load_corpus(bad, v, 4, true);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  const auto missing_tab = write_temp("cory_corpus_tab.txt", "1 + 2 =\n");
  CHECK_THROWS_AS(load_corpus(missing_tab, v, 4, true), ParseError);
  const auto too_long = write_temp("cory_corpus_long.txt", "1 + 2 + 3 =\t6\n");
  CHECK_THROWS_AS(load_corpus(too_long, v, 4, true), ParseError);
  const auto empty = write_temp("cory_corpus_empty.txt", "\n\n");
  CHECK_THROWS_AS(load_corpus(empty, v, 4, true), EmptyCorpus);
  CHECK_THROWS_AS(load_corpus("/nonexistent/corpus.txt", v, 4, true), IoError);
  for (const auto& p : {ok, bad, missing_tab, too_long, empty}) std::filesystem::remove(p);
}

TEST_CASE("corpus queries round trip through text") {
  const auto task = make_arithmetic_task(2);
  const auto qs = task.eval_queries(30, 3);
  std::string text;
  for (const auto& q : qs) text += detokenize(q.prompt.real(), task.vocab) + "\t" + detokenize(q.truth, task.vocab) + "\n";
  const auto p = write_temp("cory_corpus_rt.txt", text);
  const auto back = load_corpus(p, task.vocab, task.max_prompt_len, true);
  REQUIRE(back.size() == qs.size());
  for (std::size_t i = 0; i < qs.size(); ++i) {
    CHECK(back[i].prompt == qs[i].prompt);
    CHECK(back[i].truth == qs[i].truth);
  }
  std::filesystem::remove(p);
}

TEST_CASE("lexicon loading") {
  const auto v = sentiment_vocab();
  const auto ok = write_temp("cory_lex_ok.txt", "great\t0.75\nbad\t-0.25\n");
  const auto lex = load_lexicon(ok, v);
  CHECK(lex.at(v.id("great")) == 0.75);
  CHECK(lex.size() == 2);
  const auto bad = write_temp("cory_lex_bad.txt", "great\t0.5\nnope\t1\n");
  try {
    load_lexicon(bad, v);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  const auto nan = write_temp("cory_lex_nan.txt", "great\tx\n");
  CHECK_THROWS_AS(load_lexicon(nan, v), ParseError);
  for (const auto& p : {ok, bad, nan}) std::filesystem::remove(p);
}
