#include <doctest.h>

#include "scholar/common.hpp"

#include <cmath>

using namespace scholar;

TEST_SUITE("common") {

TEST_CASE("sha256 of known vectors") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("json digest ignores key order") {
  json a = json::parse(R"({"b":1,"a":[1,2,{"y":2,"x":1}]})");
  json b = json::parse(R"({"a":[1,2,{"x":1,"y":2}],"b":1})");
  CHECK(json_digest(a) == json_digest(b));
  CHECK(json_digest(a) != json_digest(json::parse(R"({"a":[2,1],"b":1})")));
}

TEST_CASE("string helpers") {
  CHECK(to_lower("MiXeD 42") == "mixed 42");
  CHECK(trim("  padded\t\n") == "padded");
  CHECK(trim("   ").empty());
  auto t = tokenize("Top-k KNN, recall@10!");
  CHECK(t == std::vector<std::string>{"top", "k", "knn", "recall", "10"});
  CHECK(estimate_tokens("") >= 0);
  CHECK(estimate_tokens(std::string(400, 'x')) == 100);
}

TEST_CASE("cosine") {
  std::vector<double> a{1, 0, 0}, b{0, 1, 0}, c{2, 0, 0};
  CHECK(cosine(a, b) == doctest::Approx(0.0));
  CHECK(cosine(a, c) == doctest::Approx(1.0));
  std::vector<double> z{0, 0, 0};
  CHECK(cosine(a, z) == 0.0);
}

TEST_CASE("error carries its code") {
  try {
    throw Error(ErrorCode::NotFound, "gone");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NotFound);
    CHECK(to_string(e.code()) == "not-found");
  }
  SchemaViolation sv("bad", "{raw");
  CHECK(sv.code() == ErrorCode::SchemaViolation);
  CHECK(sv.raw_response() == "{raw");
}

}
