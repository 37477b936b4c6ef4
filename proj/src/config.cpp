#include "cfmlab/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace cfmlab {
namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::string strip_comment(const std::string& line) {
    bool in_string = false;
    for (size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') in_string = !in_string;
        if (line[i] == '#' && !in_string) return line.substr(0, i);
    }
    return line;
}

struct Value {
    std::string raw;
    int line_no;

    std::string as_string() const {
        std::string t = trim(raw);
        if (t.size() >= 2 && t.front() == '"' && t.back() == '"')
            return t.substr(1, t.size() - 2);
        return t;
    }
    double as_double() const {
        try {
            return std::stod(trim(raw));
        } catch (...) {
            throw std::runtime_error("config line " + std::to_string(line_no) +
                                     ": expected a number, got '" + raw + "'");
        }
    }
    long long as_int() const {
        try {
            return std::stoll(trim(raw));
        } catch (...) {
            throw std::runtime_error("config line " + std::to_string(line_no) +
                                     ": expected an integer, got '" + raw + "'");
        }
    }
    bool as_bool() const {
        const std::string t = trim(raw);
        if (t == "true") return true;
        if (t == "false") return false;
        throw std::runtime_error("config line " + std::to_string(line_no) +
                                 ": expected true/false, got '" + raw + "'");
    }
    std::vector<std::string> as_string_list() const {
        std::string t = trim(raw);
        if (t.size() < 2 || t.front() != '[' || t.back() != ']')
            throw std::runtime_error("config line " + std::to_string(line_no) +
                                     ": expected a [list]");
        t = t.substr(1, t.size() - 2);
        std::vector<std::string> out;
        std::string cur;
        bool in_string = false;
        for (char c : t) {
            if (c == '"') {
                in_string = !in_string;
                continue;
            }
            if (c == ',' && !in_string) {
                const std::string item = trim(cur);
                if (!item.empty()) out.push_back(item);
                cur.clear();
            } else {
                cur.push_back(c);
            }
        }
        const std::string item = trim(cur);
        if (!item.empty()) out.push_back(item);
        return out;
    }
    std::vector<double> as_double_list() const {
        std::vector<double> out;
        for (const auto& s : as_string_list()) {
            try {
                out.push_back(std::stod(s));
            } catch (...) {
                throw std::runtime_error("config line " + std::to_string(line_no) +
                                         ": expected numbers in list");
            }
        }
        return out;
    }
};

}  // namespace

SuiteConfig parse_suite_text(const std::string& text) {
    SuiteConfig sc;
    std::istringstream in(text);
    std::string line;
    std::string section = "suite";
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        line = trim(strip_comment(line));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw std::runtime_error("config line " + std::to_string(line_no) +
                                         ": unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config line " + std::to_string(line_no) +
                                     ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const Value v{trim(line.substr(eq + 1)), line_no};

        if (section == "suite") {
            if (key == "dataset") sc.dataset = v.as_string();
            else if (key == "cifar_dir") sc.cifar_dir = v.as_string();
            else if (key == "num_classes") sc.num_classes = static_cast<int>(v.as_int());
            else if (key == "channels") sc.channels = static_cast<int>(v.as_int());
            else if (key == "image_size") sc.image_size = static_cast<int>(v.as_int());
            else if (key == "train_per_class") sc.train_per_class = static_cast<int>(v.as_int());
            else if (key == "test_per_class") sc.test_per_class = static_cast<int>(v.as_int());
            else if (key == "data_seed") sc.data_seed = static_cast<uint64_t>(v.as_int());
            else if (key == "sources") sc.sources = v.as_string_list();
            else if (key == "targets") sc.targets = v.as_string_list();
            else if (key == "model_dir") sc.model_dir = v.as_string();
            else if (key == "recipes") sc.recipes = v.as_string_list();
            else if (key == "attack_images") sc.attack_images = static_cast<int>(v.as_int());
            else if (key == "batch_size") sc.batch_size = static_cast<int>(v.as_int());
            else if (key == "iterations") sc.iterations = static_cast<int>(v.as_int());
            else if (key == "epsilon") sc.epsilon = v.as_double();
            else if (key == "eta") sc.eta = v.as_double();
            else if (key == "cfm_p") sc.cfm_p = v.as_double();
            else if (key == "cfm_alpha_max") sc.cfm_alpha_max = v.as_double();
            else if (key == "seed") sc.seed = static_cast<uint64_t>(v.as_int());
            else if (key == "jobs") sc.jobs = static_cast<int>(v.as_int());
            else if (key == "csv_out") sc.csv_out = v.as_string();
            else if (key == "json_out") sc.json_out = v.as_string();
            else
                throw std::runtime_error("config line " + std::to_string(line_no) +
                                         ": unknown suite key '" + key + "'");
        } else if (section == "train") {
            if (key == "epochs") sc.train.epochs = static_cast<int>(v.as_int());
            else if (key == "batch_size") sc.train.batch_size = static_cast<int>(v.as_int());
            else if (key == "learning_rate") sc.train.learning_rate = static_cast<float>(v.as_double());
            else if (key == "momentum") sc.train.momentum = static_cast<float>(v.as_double());
            else if (key == "weight_decay") sc.train.weight_decay = static_cast<float>(v.as_double());
            else if (key == "seed") sc.train.seed = static_cast<uint64_t>(v.as_int());
            else
                throw std::runtime_error("config line " + std::to_string(line_no) +
                                         ": unknown train key '" + key + "'");
        } else if (section.rfind("recipe.", 0) == 0) {
            const std::string recipe = section.substr(7);
            RecipeOverride& ov = sc.recipe_overrides[recipe];
            if (key == "p") ov.p = v.as_double();
            else if (key == "alpha_max") ov.alpha_max = v.as_double();
            else if (key == "shuffle") ov.shuffle = v.as_bool() ? 1 : 0;
            else if (key == "channelwise") ov.channelwise = v.as_bool() ? 1 : 0;
            else if (key == "use_clean") ov.use_clean = v.as_bool() ? 1 : 0;
            else
                throw std::runtime_error("config line " + std::to_string(line_no) +
                                         ": unknown recipe key '" + key + "'");
        } else {
            throw std::runtime_error("config line " + std::to_string(line_no) +
                                     ": unknown section [" + section + "]");
        }
    }
    return sc;
}

SuiteConfig parse_suite_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return parse_suite_text(os.str());
}

}  // namespace cfmlab
