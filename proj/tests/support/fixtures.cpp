#include "fixtures.hpp"

#include <cstdio>

namespace craft::testing {

namespace {

std::string padded(std::size_t n, int width = 4) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%0*zu", width, n);
    return buf;
}

std::string junk_word(std::mt19937_64& rng) {
    return "junk" + std::to_string(rng() % 5000);
}

std::string junk_phrase(std::mt19937_64& rng, std::size_t words) {
    std::string out;
    for (std::size_t i = 0; i < words; ++i) {
        if (i > 0) out += " ";
        out += junk_word(rng);
    }
    return out;
}

std::string subject_token(std::size_t i) { return "subject" + padded(i); }
std::string aspect_token(std::size_t i) { return "aspect" + padded(i); }
std::string answer_token(std::size_t i) { return "answer" + padded(i); }

}  // namespace

TableRecord make_filler_table(std::string table_id, std::mt19937_64& rng, std::size_t rows,
                              std::size_t cols) {
    TableRecord t;
    t.table_id = std::move(table_id);
    t.title = "record ledger " + junk_word(rng);
    for (std::size_t c = 0; c < cols; ++c) t.headers.push_back("field" + std::to_string(c));
    for (std::size_t r = 0; r < rows; ++r) {
        std::vector<std::string> row;
        for (std::size_t c = 0; c < cols; ++c) row.push_back(junk_phrase(rng, 2));
        t.rows.push_back(std::move(row));
    }
    t.description = "records about " + junk_word(rng) + " and " + junk_word(rng);
    return t;
}

Fixture make_planted_fixture(std::size_t n_tables, std::size_t n_queries, std::uint64_t seed,
                             std::size_t gold_rows) {
    Fixture f;
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < n_queries; ++i) {
        TableRecord gold;
        gold.table_id = "gold-" + padded(i);
        gold.title = "record sheet " + subject_token(i);
        gold.headers = {"entity", "property", "value", "note"};
        for (std::size_t r = 0; r < gold_rows; ++r) {
            if (r == 1) {
                gold.rows.push_back(
                    {subject_token(i), aspect_token(i), answer_token(i), "factual entry"});
            } else {
                gold.rows.push_back({junk_word(rng), junk_word(rng), junk_word(rng),
                                     junk_phrase(rng, 3)});
            }
        }
        gold.description = "record of " + subject_token(i) + " measurements";
        f.corpus.add_table(std::move(gold));

        QueryRecord q;
        q.qid = "q" + padded(i);
        q.question = "what is the " + aspect_token(i) + " of " + subject_token(i) + " record";
        q.gold_table_ids = {"gold-" + padded(i)};
        q.answers = {answer_token(i)};
        f.queries.push_back(std::move(q));
    }
    for (std::size_t j = f.corpus.size(); j < n_tables; ++j) {
        f.corpus.add_table(make_filler_table("tbl-" + padded(j), rng));
    }
    return f;
}

Fixture make_distractor_fixture(std::size_t n_queries, std::uint64_t seed) {
    Fixture f;
    std::mt19937_64 rng(seed);
    const std::size_t heavy = 2 * n_queries / 5;  // 40 of 100 get 12 distractors
    for (std::size_t i = 0; i < n_queries; ++i) {
        TableRecord gold;
        gold.table_id = "gold-" + padded(i);
        gold.title = "record chart " + subject_token(i);
        gold.headers = {"entity", "property", "value", "note"};
        gold.rows.push_back({junk_word(rng), junk_word(rng), junk_word(rng), "ledger entry"});
        gold.rows.push_back({subject_token(i), aspect_token(i), answer_token(i), "factual entry"});
        gold.rows.push_back({junk_word(rng), junk_word(rng), junk_word(rng), "ledger entry"});
        f.corpus.add_table(std::move(gold));

        // Lexically strong but semantically diffuse: the subject/aspect tokens
        // repeat across long junky rows and never share a row.
        std::size_t n_distractors = i < heavy ? 12 : 7;
        for (std::size_t d = 0; d < n_distractors; ++d) {
            TableRecord t;
            t.table_id = "dstr-" + padded(i) + "-" + padded(d, 2);
            t.title = "record " + subject_token(i) + " " + aspect_token(i) + " collection";
            t.headers = {"entity", "property", "value", "note"};
            for (std::size_t r = 0; r < 10; ++r) {
                std::string hot = r % 2 == 0 ? subject_token(i) : aspect_token(i);
                t.rows.push_back({hot + " " + junk_phrase(rng, 2), junk_phrase(rng, 3),
                                  junk_phrase(rng, 3), junk_phrase(rng, 4)});
            }
            f.corpus.add_table(std::move(t));
        }

        QueryRecord q;
        q.qid = "q" + padded(i);
        q.question = "what is the " + aspect_token(i) + " of " + subject_token(i) + " record";
        q.gold_table_ids = {"gold-" + padded(i)};
        q.answers = {answer_token(i)};
        f.queries.push_back(std::move(q));
    }
    return f;
}

Fixture make_wide_fixture(std::size_t n_tables, std::uint64_t seed) {
    Fixture f;
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < n_tables; ++i) {
        TableRecord t;
        t.table_id = "wide-" + padded(i, 5);
        t.title = "record entry " + padded(i, 5);
        t.headers = {"key", "value"};
        t.rows.push_back({"item " + padded(i, 5), junk_phrase(rng, 2)});
        t.rows.push_back({junk_word(rng), junk_word(rng)});
        f.corpus.add_table(std::move(t));
    }
    QueryRecord q;
    q.qid = "q0000";
    q.question = "record entry lookup";
    q.gold_table_ids = {"wide-00000"};
    q.answers = {"item 00000"};
    f.queries.push_back(std::move(q));
    return f;
}

std::vector<QueryRecord> make_perturbation_questions(const Fixture& fixture, std::size_t count) {
    std::vector<QueryRecord> out;
    const char* patterns[4] = {
        "what is the %s of %s in the record",
        "who recorded the %s for %s during the survey",
        "where was the %s of %s listed on the record",
        "what is the largest %s of %s in the ledger",
    };
    for (std::size_t i = 0; i < count && i < fixture.queries.size(); ++i) {
        QueryRecord q = fixture.queries[i];
        char buf[160];
        std::snprintf(buf, sizeof(buf), patterns[i % 4], aspect_token(i).c_str(),
                      subject_token(i).c_str());
        q.question = buf;
        out.push_back(std::move(q));
    }
    return out;
}

CaseStudy make_case_study_one() {
    CaseStudy cs;
    std::mt19937_64 rng(101);

    TableRecord draft98a;
    draft98a.table_id = "1998_afl_draft_3";
    draft98a.title = "1998 AFL draft picks";
    draft98a.headers = {"Pick", "Player"};
    draft98a.rows = {{"1", "Des Headland"}, {"2", "Luke Power"}, {"3", "Fraser Gehrig"},
                     {"4", "Clint Bizzell"}, {"5", "Trent Knobel"}};
    cs.corpus.add_table(draft98a);

    TableRecord records8;
    records8.table_id = "st_kilda_records_8";
    records8.title = "St Kilda football records and statistics";
    records8.headers = {"Season", "Notes"};
    records8.rows = {{"1995", "club attendance totals"},
                     {"1996", "membership figures"},
                     {"1997", "finals appearance"},
                     {"1998", "coach appointment"},
                     {"1999", "venue change"}};
    cs.corpus.add_table(records8);

    // Gold: answer row plus a diluted catch-all row that dominates on raw
    // token overlap but ranks last semantically.
    TableRecord gold;
    gold.table_id = "1997_afl_draft_1";
    gold.title = "1997 AFL draft picks";
    gold.headers = {"Pick", "Player", "Year"};
    gold.rows = {{"9", "Sam Reeves", "1997 afl draft"},
                 {"10", "Dean Carter", "1997 afl draft"},
                 {"11", "Jamie Elliott", "1997 afl draft"},
                 {"12", "Lee Walker", "1997 afl draft"},
                 {"13", "Ben Porter", "1997 afl draft"},
                 {"Pass",
                  "who was the st kilda pick eleven in the 1997 afl draft commentary " +
                      junk_phrase(rng, 400),
                  "1997"}};
    cs.corpus.add_table(gold);

    TableRecord draft98b;
    draft98b.table_id = "1998_afl_draft_2";
    draft98b.title = "1998 AFL draft second round";
    draft98b.headers = {"Pick", "Player"};
    draft98b.rows = {{"20", "Adam Lange"}, {"21", "Joel Smith"}, {"22", "Ryan Hale"}};
    cs.corpus.add_table(draft98b);

    TableRecord records9;
    records9.table_id = "st_kilda_records_9";
    records9.title = "St Kilda football records and statistics part two";
    records9.headers = {"Season", "Notes"};
    records9.rows = {{"2000", "stadium move"}, {"2001", "captain change"}};
    cs.corpus.add_table(records9);

    cs.query.qid = "case1";
    cs.query.question = "who was the st. kilda pick 11 in the 1997 afl draft";
    cs.query.gold_table_ids = {"1997_afl_draft_1"};
    cs.query.answers = {"Jamie Elliott"};
    cs.gold_id = "1997_afl_draft_1";
    cs.ranked_ids = {"1998_afl_draft_3", "st_kilda_records_8", "1997_afl_draft_1",
                     "1998_afl_draft_2", "st_kilda_records_9"};
    return cs;
}

CaseStudy make_case_study_two() {
    CaseStudy cs;
    std::mt19937_64 rng(202);

    TableRecord songs1;
    songs1.table_id = "list_of_songs_recorded_by_elisa_1";
    songs1.title = "List of songs recorded by Elisa part two";
    songs1.headers = {"Song", "Album", "Note"};
    songs1.rows = {{"Rainbow", "Pearl Days", "third studio release"},
                   {"Together", "Pearl Days", "duet version"},
                   {"Electricity", "Heart", "later single"}};
    cs.corpus.add_table(songs1);

    TableRecord gold;
    gold.table_id = "list_of_songs_recorded_by_elisa_0";
    gold.title = "List of songs recorded by Elisa";
    gold.headers = {"Song", "Album", "Note"};
    gold.rows = {{"Luce", "Asile's World", "elisa s most popular original song come out single"},
                 {"Dancing", "Then Comes the Sun", "original ballad song release"},
                 {"Gift", "Asile's World", "album original track song"},
                 {"Labyrinth", "Lotus", "studio album popular song recording"},
                 {"Heaven Out of Hell", "Asile's World", "popular album single song"},
                 {"Broken", "Lotus",
                  "what album did elisa s most popular original song come out on review " +
                      junk_phrase(rng, 800)}};
    cs.corpus.add_table(gold);

    TableRecord singer1;
    singer1.table_id = "elisa_italian_singer_1";
    singer1.title = "Elisa discography overview";
    singer1.headers = {"Year", "Event"};
    singer1.rows = {{"1997", "debut contract"}, {"2001", "festival win"}};
    cs.corpus.add_table(singer1);

    TableRecord singer0;
    singer0.table_id = "elisa_italian_singer_0";
    singer0.title = "Elisa career summary";
    singer0.headers = {"Year", "Event"};
    singer0.rows = {{"2003", "arena tour"}, {"2005", "collaboration"}};
    cs.corpus.add_table(singer0);

    TableRecord raquel;
    raquel.table_id = "raquel_olmedo_1";
    raquel.title = "Raquel Olmedo recordings";
    raquel.headers = {"Song", "Album", "Note"};
    raquel.rows = {{"Mirame", "Seguir", "classic recording"}, {"Volver", "Seguir", "cover"}};
    cs.corpus.add_table(raquel);

    cs.query.qid = "case2";
    cs.query.question = "What album did Elisa's most popular original song come out on?";
    cs.query.gold_table_ids = {"list_of_songs_recorded_by_elisa_0"};
    cs.query.answers = {"Asile's World"};
    cs.gold_id = "list_of_songs_recorded_by_elisa_0";
    cs.ranked_ids = {"list_of_songs_recorded_by_elisa_1", "list_of_songs_recorded_by_elisa_0",
                     "elisa_italian_singer_1", "elisa_italian_singer_0", "raquel_olmedo_1"};
    return cs;
}

}  // namespace craft::testing
