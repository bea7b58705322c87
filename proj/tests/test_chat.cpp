#include <doctest.h>

#include "intentguard/chat.hpp"
#include "intentguard/errors.hpp"

using namespace intentguard;

TEST_CASE("transcript invariants") {
  ChatTranscript t = ChatTranscript::make("be nice", "hi");
  CHECK_NOTHROW(t.validate());

  SUBCASE("system must be first and unique") {
    t.messages.push_back({Role::assistant, "hello"});
    t.messages.push_back({Role::system, "again"});
    CHECK_THROWS_AS(t.validate(), ValidationError);
  }
  SUBCASE("roles alternate starting with user") {
    t.messages.push_back({Role::user, "double user"});
    CHECK_THROWS_AS(t.validate(), ValidationError);
  }
  SUBCASE("assistant cannot open the conversation") {
    ChatTranscript bad;
    bad.messages.push_back({Role::assistant, "hi"});
    CHECK_THROWS_AS(bad.validate(), ValidationError);
  }
  SUBCASE("user content must be non-empty") {
    ChatTranscript bad;
    bad.messages.push_back({Role::user, ""});
    CHECK_THROWS_AS(bad.validate(), ValidationError);
  }
  SUBCASE("empty transcript invalid") {
    ChatTranscript bad;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
  }
  SUBCASE("lone system message invalid") {
    ChatTranscript bad;
    bad.messages.push_back({Role::system, "s"});
    CHECK_THROWS_AS(bad.validate(), ValidationError);
  }
}

TEST_CASE("multi-turn alternation") {
  ChatTranscript t;
  t.messages = {{Role::user, "a"}, {Role::assistant, "b"}, {Role::user, "c"}};
  CHECK_NOTHROW(t.validate());
  CHECK(t.last_user_message()->content == "c");
  CHECK(t.system_message() == nullptr);
}

TEST_CASE("gen params validation") {
  GenParams p;
  CHECK_NOTHROW(p.validate());
  p.max_new_tokens = 0;
  CHECK_THROWS_AS(p.validate(), ValidationError);
  p.max_new_tokens = 8;
  p.temperature = -0.1;
  CHECK_THROWS_AS(p.validate(), ValidationError);
  p.temperature = 0.0;
  p.prefill = "";
  CHECK_THROWS_AS(p.validate(), ValidationError);
}

TEST_CASE("role round trip") {
  for (Role r : {Role::system, Role::user, Role::assistant}) {
    CHECK(role_from_string(to_string(r)) == r);
  }
  CHECK_THROWS_AS(role_from_string("tool"), ValidationError);
}
