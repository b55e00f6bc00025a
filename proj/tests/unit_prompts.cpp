#include <doctest.h>

#include <fstream>
#include <string>

#include "cooprag/errors.hpp"
#include "cooprag/prompts.hpp"

#include "support/synth.hpp"

using namespace cooprag;
using testsupport::ScratchDir;

namespace {

void spit(const std::filesystem::path& path, const std::string& body) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(body.data(), static_cast<std::streamsize>(body.size()));
}

} // namespace

TEST_SUITE("prompts") {

TEST_CASE("builtin templates validate and anchor the unroll grammar") {
    const auto t = PromptTemplates::builtin();
    CHECK_NOTHROW(t.validate());
    CHECK(t.unroll.find("replace the entity with") != std::string::npos);
    CHECK(t.unroll.find("Hop Count:") != std::string::npos);
    CHECK(t.answer.find("<<ANS>>") != std::string::npos);
    CHECK(t.completion.find("[context]") != std::string::npos);
    CHECK(t.key_extract.find("[context]") != std::string::npos);
    CHECK(t.unified.find("[chain]") != std::string::npos);
}

TEST_CASE("directory overrides replace individual templates") {
    ScratchDir dir("prompt_dir");
    spit(dir.file("answer.txt"),
         "Say it.\n[context]\n[question]\n[sub_questions]\n[chain]\n<<ANS>>here<<ANS>>");

    const auto t = PromptTemplates::load_dir(dir.path());
    CHECK(t.answer.rfind("Say it.", 0) == 0);
    // Untouched slots keep their built-in content.
    CHECK(t.unroll == PromptTemplates::builtin().unroll);
    CHECK(t.completion == PromptTemplates::builtin().completion);

    CHECK_THROWS_AS(PromptTemplates::load_dir(dir.path() / "missing"), IoError);
}

TEST_CASE("override files that break the contract are rejected") {
    ScratchDir dir("prompt_bad");
    spit(dir.file("answer.txt"), "no placeholders at all");
    CHECK_THROWS_AS(PromptTemplates::load_dir(dir.path()), SchemaError);
}

TEST_CASE("validation names each missing requirement") {
    auto t = PromptTemplates::builtin();

    SUBCASE("unroll needs its question slot") {
        t.unroll = "Hop Count: Reasoning Structure: Sub-questions: Triple Reasoning Chain:";
        CHECK_THROWS_AS(t.validate(), SchemaError);
    }
    SUBCASE("unroll needs the section markers") {
        t.unroll = "[question] Hop Count: Sub-questions: Triple Reasoning Chain:";
        CHECK_THROWS_AS(t.validate(), SchemaError);
    }
    SUBCASE("completion needs the chain slot") {
        t.completion = "[context] [question] [sub_questions]";
        CHECK_THROWS_AS(t.validate(), SchemaError);
    }
    SUBCASE("answer needs its delimiters") {
        t.answer = "[context] [question] [sub_questions] [chain]";
        CHECK_THROWS_AS(t.validate(), SchemaError);
    }
    SUBCASE("key extract needs question and context") {
        t.key_extract = "[question] only";
        CHECK_THROWS_AS(t.validate(), SchemaError);
    }
    SUBCASE("unified needs all four slots") {
        t.unified = "[context] [question] [chain]";
        CHECK_THROWS_AS(t.validate(), SchemaError);
    }
}

TEST_CASE("substitution replaces every occurrence in one pass") {
    CHECK(substitute("a [x] b [x]", "[x]", "Y") == "a Y b Y");
    CHECK(substitute("[x][x][x]", "[x]", "") == "");
    CHECK(substitute("untouched", "[x]", "Y") == "untouched");
    CHECK(substitute("", "[x]", "Y") == "");
    // Values containing the placeholder are not rescanned.
    CHECK(substitute("go [x] stop", "[x]", "[x]!") == "go [x]! stop");
    CHECK(substitute("aaa", "aa", "a") == "aa");
    CHECK_THROWS_AS(substitute("text", "", "v"), InvariantViolation);
}

TEST_CASE("context blocks number documents from one") {
    const std::vector<Document> docs{{"d9", "First Title", "Alpha text."},
                                     {"d2", "Second", "Beta text."}};
    CHECK(render_context_block(docs) ==
          "Document[1] (Title: First Title) Alpha text.\n"
          "Document[2] (Title: Second) Beta text.");
    CHECK(render_key_extract_block(docs) ==
          "Document [1]: (Title: First Title) Alpha text.\n"
          "Document [2]: (Title: Second) Beta text.");
    CHECK(render_context_block({}) == "");
    CHECK(render_key_extract_block({}) == "");
}

} // TEST_SUITE
