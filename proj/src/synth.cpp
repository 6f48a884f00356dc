#include "guidedial/synth.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <stdexcept>
#include <tuple>

#include "guidedial/errors.hpp"

namespace fs = std::filesystem;

namespace guidedial {

namespace {

enum Kind { person, star, movie, song, restaurant, food, city, date, kNumKinds };

const std::vector<std::string> kTypes = {
    "greetings",          "chat about stars",  "movie recommendation", "music recommendation", "play music",
    "poi recommendation", "food recommendation", "weather inquiry",    "ask about date",       "question answering",
    "news recommendation", "music on demand",  "say goodbye"};

enum TypeId {
  t_greet, t_stars, t_movie, t_music, t_play, t_poi, t_food, t_weather, t_date, t_qa, t_news, t_demand, t_bye
};

// Two phrasings per type; every one mentions {topic}.
const std::array<std::array<const char*, 2>, 13> kSystemTemplates = {{
    {"hi {topic} , nice to talk with you again !", "hello {topic} , how are you doing today ?"},
    {"do you know {topic} ? {topic} was born in {birthplace} .", "{topic} is a talented star from {birthplace} ."},
    {"i recommend the movie {topic} , its rating is {rating} .", "you may enjoy the film {topic} , rated {rating} ."},
    {"you may like the song {topic} , a lovely {genre} song .", "let me suggest {topic} , it is great {genre} music ."},
    {"ok , playing {topic} for you now .", "sure , {topic} is playing now , enjoy !"},
    {"the restaurant {topic} is nearby and very popular .", "you could visit {topic} , a popular place to eat ."},
    {"you should try {topic} , it tastes {taste} .", "how about some {topic} ? it is {taste} and fresh ."},
    {"the weather in {topic} is {weather} today .", "it is {weather} in {topic} right now ."},
    {"today is {topic} .", "it is {topic} today ."},
    {"the answer is {topic} .", "i believe it is {topic} ."},
    {"here is some news about {topic} , a new album is coming .", "{topic} is in the news today , a tour was announced ."},
    {"here is {topic} as you asked .", "no problem , {topic} coming right up ."},
    {"goodbye {topic} , see you next time .", "bye {topic} , have a nice day ."},
}};

const std::vector<std::string> kSyllables = {"ka", "lo", "mi", "ren", "su", "ta", "vo", "ne", "ri", "pa", "do",
                                             "zu", "ba", "te", "lin", "mo", "sha", "ki", "ro", "fe", "gu", "wen",
                                             "ya", "hu", "tor", "li", "na", "qi", "sen", "dal"};
const std::vector<std::string> kMonths = {"january", "february", "march",     "april",   "may",      "june",
                                          "july",    "august",   "september", "october", "november", "december"};
const std::vector<std::string> kOrdinals = {"first", "second", "third", "fourth", "fifth", "sixth", "seventh",
                                            "eighth", "ninth", "tenth", "eleventh", "twelfth"};
const std::vector<std::string> kRatings = {"seven point five", "eight", "eight point two", "nine", "nine point one"};
const std::vector<std::string> kGenres = {"jazz", "folk", "rock", "pop", "blues"};
const std::vector<std::string> kTastes = {"spicy", "sweet", "savory", "sour"};
const std::vector<std::string> kWeathers = {"sunny", "rainy", "cloudy", "windy"};
const std::vector<std::string> kAgeRanges = {"under 18", "18 to 25", "26 to 35", "over 35"};

struct Keyword {
  int type;
  std::string topic;
};

struct Triple {
  std::string s, r, o;
};

/// Topic universe plus the fixed knowledge graph linking it.
struct World {
  std::array<std::vector<std::string>, kNumKinds> topics;
  std::map<std::string, std::string> star_of;        // movie or song -> star
  std::map<std::string, std::string> city_of;        // restaurant -> city
  std::map<std::string, std::string> restaurant_of;  // food -> restaurant
  std::map<std::string, std::string> attribute;      // movie rating, song genre, food taste, star birthplace
  std::map<std::string, int> kind_of;
};

class Generator {
 public:
  explicit Generator(const SynthOptions& o) : opt_(o), rng_(o.seed) {}

  SynthCorpus run();

 private:
  int uniform(int n) { return std::uniform_int_distribution<int>(0, n - 1)(rng_); }
  bool coin(double p) { return std::bernoulli_distribution(p)(rng_); }
  template <typename V>
  const auto& pick(const V& v) {
    return v[static_cast<size_t>(uniform(static_cast<int>(v.size())))];
  }

  std::string fresh_name(int words);
  void build_world();
  std::vector<Keyword> plan(const Keyword& goal);
  std::vector<RawSample> render(const std::vector<Keyword>& path);
  std::vector<RawSample> dialogue(const Keyword& goal, const Keyword* forced = nullptr);
  Keyword random_goal(const std::vector<std::string>& topics_pool);
  std::string fill(std::string text, const std::string& topic, const std::map<std::string, std::string>& slots);

  SynthOptions opt_;
  std::mt19937_64 rng_;
  World world_;
  std::set<std::string> used_names_;
  std::vector<std::string> goal_in_;   // goal topics allowed in train/dev/test_id
  std::vector<std::string> goal_ood_;  // goal topics reserved for test_ood
};

std::string Generator::fresh_name(int words) {
  for (int attempt = 0; attempt < 10000; ++attempt) {
    std::string name;
    for (int w = 0; w < words; ++w) {
      if (w) name += ' ';
      int syl = 2 + uniform(2);
      for (int s = 0; s < syl; ++s) name += pick(kSyllables);
    }
    if (used_names_.insert(name).second) return name;
  }
  throw std::runtime_error("synth: could not generate a unique topic name");
}

void Generator::build_world() {
  const int n = opt_.topics_per_kind;
  if (n < 2) throw ValidationError("topics_per_kind must be >= 2");
  if (n > static_cast<int>(kMonths.size() * kOrdinals.size())) throw ValidationError("topics_per_kind too large");
  for (int k = 0; k < kNumKinds; ++k) {
    auto& list = world_.topics[static_cast<size_t>(k)];
    while (static_cast<int>(list.size()) < n) {
      std::string name;
      if (k == date) {
        name = kMonths[list.size() % kMonths.size()] + " " + kOrdinals[list.size() / kMonths.size()];
        used_names_.insert(name);
      } else if (k == song && list.empty()) {
        name = "piano of sorrow";
        used_names_.insert(name);
      } else {
        name = fresh_name(k == person || k == city ? 1 : 1 + uniform(2));
      }
      list.push_back(name);
      world_.kind_of[name] = k;
    }
  }
  const auto& T = world_.topics;
  for (const auto& m : T[movie]) {
    world_.star_of[m] = pick(T[star]);
    world_.attribute[m] = pick(kRatings);
  }
  for (const auto& s : T[song]) {
    world_.star_of[s] = pick(T[star]);
    world_.attribute[s] = pick(kGenres);
  }
  for (const auto& r : T[restaurant]) world_.city_of[r] = pick(T[city]);
  for (const auto& f : T[food]) {
    world_.restaurant_of[f] = pick(T[restaurant]);
    world_.attribute[f] = pick(kTastes);
  }
  for (const auto& s : T[star]) world_.attribute[s] = pick(T[city]);

  // Goal topics: movies, songs, restaurants and foods; a share of each is held out.
  for (int k : {movie, song, restaurant, food}) {
    std::vector<std::string> topics = T[static_cast<size_t>(k)];
    std::shuffle(topics.begin(), topics.end(), rng_);
    int held = std::clamp(static_cast<int>(opt_.ood_fraction * static_cast<double>(topics.size()) + 0.5), 0,
                          static_cast<int>(topics.size()) - 1);
    // Keep the named example song in-domain.
    auto piano = std::find(topics.begin(), topics.end(), "piano of sorrow");
    if (piano != topics.end()) std::iter_swap(piano, topics.end() - 1);
    goal_ood_.insert(goal_ood_.end(), topics.begin(), topics.begin() + held);
    goal_in_.insert(goal_in_.end(), topics.begin() + held, topics.end());
  }
}

Keyword Generator::random_goal(const std::vector<std::string>& pool) {
  const std::string& topic = pick(pool);
  switch (world_.kind_of.at(topic)) {
    case movie:
      return {t_movie, topic};
    case song: {
      static const std::array<int, 3> song_types = {t_music, t_play, t_demand};
      return {song_types[static_cast<size_t>(uniform(3))], topic};
    }
    case restaurant:
      return {t_poi, topic};
    default:
      return {t_food, topic};
  }
}

std::vector<Keyword> Generator::plan(const Keyword& goal) {
  std::vector<Keyword> chain;  // built backwards from the goal
  chain.push_back(goal);
  const int kind = world_.kind_of.at(goal.topic);
  const int budget = opt_.max_path > 0 ? 1 + uniform(opt_.max_path) : 0;
  if (budget > 0) {
    if (kind == movie || kind == song) {
      const std::string& s = world_.star_of.at(goal.topic);
      chain.push_back({kind == song && coin(0.5) ? t_news : t_stars, s});
    } else if (kind == restaurant) {
      chain.push_back({t_weather, world_.city_of.at(goal.topic)});
    } else {
      const std::string& r = world_.restaurant_of.at(goal.topic);
      chain.push_back({t_poi, r});
      if (budget > 1) chain.push_back({t_weather, world_.city_of.at(r)});
    }
  }
  if (static_cast<int>(chain.size()) <= budget && coin(0.3)) chain.push_back({t_date, pick(world_.topics[date])});
  std::reverse(chain.begin(), chain.end());
  return chain;
}

std::string Generator::fill(std::string text, const std::string& topic,
                            const std::map<std::string, std::string>& slots) {
  auto replace_all = [&](const std::string& key, const std::string& value) {
    for (size_t pos; (pos = text.find(key)) != std::string::npos;) text.replace(pos, key.size(), value);
  };
  replace_all("{topic}", topic);
  for (const auto& [k, v] : slots) replace_all("{" + k + "}", v);
  return text;
}

std::vector<RawSample> Generator::render(const std::vector<Keyword>& path) {
  const std::string name = pick(world_.topics[person]);
  std::vector<Keyword> full;
  if (coin(0.6)) full.push_back({t_greet, name});
  full.insert(full.end(), path.begin(), path.end());

  // Knowledge: facts behind each keyword plus unrelated distractors.
  std::vector<Triple> facts;
  std::map<std::string, std::string> weather_of;
  for (const auto& k : full) {
    const int kind = world_.kind_of.at(k.topic);
    if (kind == movie) {
      facts.push_back({world_.star_of.at(k.topic), "starred in", k.topic});
      facts.push_back({k.topic, "rating", world_.attribute.at(k.topic)});
    } else if (kind == song) {
      facts.push_back({world_.star_of.at(k.topic), "sang", k.topic});
      facts.push_back({k.topic, "genre", world_.attribute.at(k.topic)});
    } else if (kind == star) {
      facts.push_back({k.topic, "birthplace", world_.attribute.at(k.topic)});
    } else if (kind == restaurant) {
      facts.push_back({world_.city_of.at(k.topic), "has restaurant", k.topic});
    } else if (kind == food) {
      facts.push_back({world_.restaurant_of.at(k.topic), "serves", k.topic});
      facts.push_back({k.topic, "taste", world_.attribute.at(k.topic)});
    } else if (kind == city) {
      weather_of[k.topic] = pick(kWeathers);
      facts.push_back({k.topic, "weather", weather_of[k.topic]});
    }
  }
  const int distractors = 2 + uniform(3);
  for (int i = 0; i < distractors; ++i) {
    const std::string& m = pick(world_.topics[movie]);
    const std::string& s = pick(world_.topics[song]);
    facts.push_back(coin(0.5) ? Triple{world_.star_of.at(m), "starred in", m} : Triple{s, "genre", world_.attribute.at(s)});
  }
  std::set<std::tuple<std::string, std::string, std::string>> seen_facts;
  std::erase_if(facts, [&](const Triple& t) { return !seen_facts.insert({t.s, t.r, t.o}).second; });
  std::shuffle(facts.begin(), facts.end(), rng_);

  Profile profile = {{"name", name},
                     {"gender", coin(0.5) ? "female" : "male"},
                     {"age range", pick(kAgeRanges)},
                     {"favorite star", pick(world_.topics[star])}};

  std::vector<RawTurn> turns;
  std::vector<RawSample> samples;
  std::string prev_topic;
  for (size_t i = 0; i < full.size(); ++i) {
    const Keyword& k = full[i];
    std::string user;
    if (i == 0) {
      user = coin(0.5) ? "hello , i am " + name + " ." : "hi there !";
    } else if (k.type == t_date) {
      user = "what is the date today ?";
    } else if (k.type == t_weather) {
      user = coin(0.5) ? "how is the weather ?" : "any plans for today ?";
    } else {
      static const std::vector<std::string> replies = {"oh , tell me more .", "sounds nice , what else ?",
                                                       "great , thanks !", "i have heard of {prev} ."};
      user = pick(replies);
      for (size_t pos; (pos = user.find("{prev}")) != std::string::npos;) user.replace(pos, 6, prev_topic);
    }
    turns.push_back({Speaker::user, user, std::nullopt});

    std::map<std::string, std::string> slots;
    const int kind = world_.kind_of.at(k.topic);
    if (kind == star) slots["birthplace"] = world_.attribute.at(k.topic);
    if (kind == movie) slots["rating"] = world_.attribute.at(k.topic);
    if (kind == song) slots["genre"] = world_.attribute.at(k.topic);
    if (kind == food) slots["taste"] = world_.attribute.at(k.topic);
    if (kind == city) slots["weather"] = weather_of.count(k.topic) ? weather_of[k.topic] : pick(kWeathers);
    const std::string system =
        fill(kSystemTemplates[static_cast<size_t>(k.type)][static_cast<size_t>(uniform(2))], k.topic, slots);

    RawSample s;
    s.history = turns;
    s.target = {kTypes[static_cast<size_t>(full.back().type)], full.back().topic};
    s.profile = profile;
    for (const auto& f : facts) s.knowledge.push_back({f.s, f.r, f.o});
    for (size_t j = i; j < full.size(); ++j) s.bridge.push_back({kTypes[static_cast<size_t>(full[j].type)], full[j].topic});
    s.reference = system;
    samples.push_back(std::move(s));

    turns.push_back({Speaker::system, system, RawKeyword{kTypes[static_cast<size_t>(k.type)], k.topic}});
    prev_topic = k.topic;
  }
  return samples;
}

std::vector<RawSample> Generator::dialogue(const Keyword& goal, const Keyword* forced) {
  std::vector<Keyword> path = plan(goal);
  if (forced) path.insert(path.end() - 1, *forced);
  return render(path);
}

SynthCorpus Generator::run() {
  build_world();
  SynthCorpus c;
  auto append = [](std::vector<RawSample>& dst, std::vector<RawSample> src) {
    dst.insert(dst.end(), std::make_move_iterator(src.begin()), std::make_move_iterator(src.end()));
  };
  std::set<std::string> train_targets;
  for (int i = 0; i < opt_.train_dialogues; ++i) {
    Keyword goal = random_goal(goal_in_);
    train_targets.insert(goal.topic);
    append(c.train, dialogue(goal));
  }
  for (int i = 0; i < opt_.dev_dialogues; ++i) append(c.dev, dialogue(random_goal(goal_in_)));
  std::vector<std::string> seen(train_targets.begin(), train_targets.end());
  for (int i = 0; i < opt_.test_id_dialogues && !seen.empty(); ++i) append(c.test_id, dialogue(random_goal(seen)));
  for (int i = 0; i < opt_.test_ood_dialogues && !goal_ood_.empty(); ++i) append(c.test_ood, dialogue(random_goal(goal_ood_)));

  // Make every needed topic (and type) occur in train so all splits resolve
  // against an inventory built from train + dev.
  std::set<std::string> in_train, in_types;
  for (const auto& s : c.train) {
    for (const auto& b : s.bridge) {
      in_train.insert(b.topic);
      in_types.insert(b.type);
    }
  }
  std::vector<std::string> needed;
  if (opt_.cover_all_topics) {
    for (const auto& list : world_.topics) needed.insert(needed.end(), list.begin(), list.end());
  } else {
    for (const auto* split : {&c.dev, &c.test_id, &c.test_ood}) {
      for (const auto& s : *split) {
        for (const auto& b : s.bridge) needed.push_back(b.topic);
      }
    }
  }
  for (const auto& topic : needed) {
    if (in_train.count(topic)) continue;
    Keyword goal = random_goal(seen.empty() ? goal_in_ : seen);
    const int kind = world_.kind_of.at(topic);
    Keyword mention{kind == person ? t_greet : kind == date ? t_date : t_qa, topic};
    auto extra = dialogue(goal, &mention);
    for (const auto& s : extra) {
      for (const auto& b : s.bridge) in_train.insert(b.topic);
    }
    append(c.train, std::move(extra));
  }

  // Same for types. A missing type is mentioned once on a topic of a fitting kind.
  for (const auto& s : c.train) {
    for (const auto& b : s.bridge) in_types.insert(b.type);
  }
  std::vector<Keyword> type_needs;
  if (opt_.cover_all_topics) {
    static const std::array<int, 13> kind_of_type = {person, star, movie, song, song, restaurant, food,
                                                     city,   date, food, star, song, person};
    for (int t = 0; t < static_cast<int>(kTypes.size()); ++t) {
      type_needs.push_back({t, world_.topics[static_cast<size_t>(kind_of_type[static_cast<size_t>(t)])].front()});
    }
  } else {
    for (const auto* split : {&c.dev, &c.test_id, &c.test_ood}) {
      for (const auto& s : *split) {
        for (const auto& b : s.bridge) {
          const auto it = std::find(kTypes.begin(), kTypes.end(), b.type);
          type_needs.push_back({static_cast<int>(it - kTypes.begin()), b.topic});
        }
      }
    }
  }
  for (const auto& need : type_needs) {
    if (!in_types.insert(kTypes[static_cast<size_t>(need.type)]).second) continue;
    append(c.train, dialogue(random_goal(seen.empty() ? goal_in_ : seen), &need));
  }
  return c;
}

}  // namespace

const std::vector<std::string>& synth_types() { return kTypes; }

SynthCorpus synthesize(const SynthOptions& options) {
  if (options.train_dialogues < 1) throw ValidationError("train_dialogues must be >= 1");
  if (options.max_path < 0) throw ValidationError("max_path must be >= 0");
  if (!(options.ood_fraction >= 0.0 && options.ood_fraction < 1.0)) {
    throw ValidationError("ood_fraction must be in [0, 1)");
  }
  return Generator(options).run();
}

void write_corpus(const fs::path& dir, const SynthCorpus& corpus) {
  fs::create_directories(dir);
  auto dump = [&](const char* name, const std::vector<RawSample>& samples) {
    const fs::path file = dir / (std::string(name) + ".jsonl");
    std::ofstream out(file);
    if (!out) throw std::runtime_error("cannot write " + file.string());
    for (const auto& s : samples) out << to_json(s).dump() << '\n';
  };
  dump("train", corpus.train);
  dump("dev", corpus.dev);
  dump("test_id", corpus.test_id);
  dump("test_ood", corpus.test_ood);
}

}  // namespace guidedial
