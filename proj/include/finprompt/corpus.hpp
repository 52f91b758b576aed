#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace finprompt::corpus {

// ---------------------------------------------------------------------------
// Numbers
// ---------------------------------------------------------------------------

// Strict parse of one numeric literal as written in filings and answers:
// leading currency symbol, thousands separators, trailing '%' (face value,
// not divided by 100), sign, and accounting parentheses for negatives.
// Returns nullopt unless the whole string is a single finite number.
std::optional<double> parse_number(std::string_view raw);

// The last numeric token in free text, normalized with parse_number.
std::optional<double> extract_last_number(std::string_view text);

// Shortest decimal text that parses back to exactly `value`.
std::string format_number(double value);

// ---------------------------------------------------------------------------
// Examples
// ---------------------------------------------------------------------------

enum class Subset { SimpShort, CompShort, SimpLong, CompLong };
enum class Origin { real, synthetic };

std::string_view to_string(Subset subset);
std::optional<Subset> subset_from_string(std::string_view name);
std::string_view to_string(Origin origin);

struct Example {
    std::string id;
    std::string passage;
    std::string question;
    double gold_answer = 0.0;
    std::optional<int> difficulty;
    Origin origin = Origin::real;
    std::optional<Subset> subset;

    // Throws SchemaError when an invariant is broken.
    void validate() const;

    bool operator==(const Example&) const = default;
};

void to_json(nlohmann::json& j, const Example& e);
void from_json(const nlohmann::json& j, Example& e);

// ---------------------------------------------------------------------------
// Pipe tables
// ---------------------------------------------------------------------------

struct Cell {
    std::string raw;
    std::optional<double> value;

    bool operator==(const Cell&) const = default;
};

struct TableRow {
    std::string label;
    std::vector<Cell> cells;

    bool operator==(const TableRow&) const = default;
};

// A flat pipe table. `stub` is the top-left header cell; `header` holds the
// value-column labels, so every row has header.size() cells.
struct Table {
    std::string stub;
    std::vector<std::string> header;
    std::vector<TableRow> rows;
    std::pair<std::size_t, std::size_t> source_span{0, 0};

    std::optional<std::size_t> column_index(std::string_view label) const;
    std::vector<std::size_t> rows_labelled(std::string_view label) const;

    bool operator==(const Table&) const = default;
};

// A pipe-line run that could not be turned into a Table.
struct TableIssue {
    std::pair<std::size_t, std::size_t> source_span;
    std::optional<std::size_t> row;  // 1-based data row, when one row is at fault
    std::string message;
};

struct TableScan {
    std::vector<Table> tables;
    std::vector<TableIssue> issues;
};

// Every maximal run of consecutive lines starting with '|' is one table
// candidate. Separator rows are consumed; ragged runs become issues.
TableScan scan_tables(std::string_view passage);

// scan_tables without the issues (they are logged).
std::vector<Table> extract_tables(std::string_view passage);

// Markdown rendering with a separator row after the header.
std::string render_table(const Table& table);

// Case-folded, whitespace-collapsed label used for matching.
std::string normalize_label(std::string_view label);

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

struct LoadOptions {
    bool strict = false;
    std::optional<Subset> subset_filter;
    std::optional<Subset> default_subset;  // for records without a subset field
};

struct LoadReport {
    std::vector<Example> examples;
    std::vector<std::string> skipped;  // "line N: reason"
};

// Line-delimited JSON records {id?, paragraphs, question, ground_truth,
// subset?}. `paragraphs` may be a string or a list joined with newlines;
// an optional `tables` list is appended to the passage.
LoadReport load_dataset_report(const std::string& path, const LoadOptions& options = {});
std::vector<Example> load_dataset(const std::string& path, const LoadOptions& options = {});

void save_dataset(const std::string& path, std::span<const Example> examples);

// ---------------------------------------------------------------------------
// Label prior
// ---------------------------------------------------------------------------

// Half-open interval [lower, upper).
struct Bucket {
    double lower;
    double upper;
    std::string name;

    bool contains(double x) const { return x >= lower && x < upper; }
    bool operator==(const Bucket&) const = default;
};

// (-inf,0) [0,1) [1,10) [10,100) [100,1000) [1000,1e6) [1e6,inf)
const std::vector<Bucket>& default_buckets();
std::size_t bucket_index(double value, std::span<const Bucket> buckets = default_buckets());

struct LabelPrior {
    std::vector<Bucket> buckets;
    std::vector<double> probabilities;
    std::size_t sample_count = 0;

    bool operator==(const LabelPrior&) const = default;
};

void to_json(nlohmann::json& j, const LabelPrior& p);
void from_json(const nlohmann::json& j, LabelPrior& p);

// Add-one smoothed bucket distribution of raw answers. Throws EmptyCorpus.
LabelPrior label_distribution(std::span<const double> answers);

LabelPrior estimate_label_prior(std::span<const Example> examples);

} // namespace finprompt::corpus
