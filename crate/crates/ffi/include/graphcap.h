#ifndef GRAPHCAP_H
#define GRAPHCAP_H

/* Generated by cbindgen from graphcap-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Extraction template selector.
typedef enum GcChain {
  GcChain_ExtractOriginal = 0,
  GcChain_ExtractParaphrase = 1,
} GcChain;

// Lexicon kind selector.
typedef enum GcLexiconKind {
  GcLexiconKind_Entity = 0,
  GcLexiconKind_Predicate = 1,
} GcLexiconKind;

// Result codes for fallible calls.
typedef enum GcStatus {
  GcStatus_Ok = 0,
  GcStatus_InvalidArgument = 1,
  GcStatus_InvalidUtf8 = 2,
  GcStatus_Io = 3,
  GcStatus_Render = 4,
} GcStatus;

// Opaque lexicon handle.
typedef struct GcLexicon GcLexicon;

// Opaque bundle of the stock prompt templates.
typedef struct GcTemplates GcTemplates;

// Opaque parsed-triplet list.
typedef struct GcTriplets GcTriplets;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread, or null. The
// pointer is valid until the next failing call on the same thread.
const char *graphcap_last_error(void);

// Library version as a static string; do not free.
const char *graphcap_version(void);

// Frees a string returned by this library.
//
// # Safety
// `s` must be a pointer returned by a graphcap function, or null.
void graphcap_string_free(char *s);

// Normalizes a lexeme (lowercase, collapsed whitespace, surrounding
// punctuation and leading articles removed). Returns an empty string for
// inputs that normalize to nothing.
//
// # Safety
// `input` must be a valid NUL-terminated string.
char *graphcap_normalize_lexeme(const char *input);

// Loads a lexicon from a file (one class per line, or the JSON form).
//
// # Safety
// `path` must be a valid NUL-terminated string and `out` a valid pointer.
enum GcStatus graphcap_lexicon_load(const char *path,
                                    enum GcLexiconKind kind,
                                    struct GcLexicon **out);

// # Safety
// `lexicon` must come from [`graphcap_lexicon_load`], or be null.
void graphcap_lexicon_free(struct GcLexicon *lexicon);

// Number of classes; 0 for a null handle.
//
// # Safety
// `lexicon` must be a live handle or null.
size_t graphcap_lexicon_len(const struct GcLexicon *lexicon);

// Class name at a 1-based index, or null when out of range.
//
// # Safety
// `lexicon` must be a live handle or null.
char *graphcap_lexicon_class(const struct GcLexicon *lexicon, size_t index);

// 1-based index of an exact class name, 0 when absent.
//
// # Safety
// `lexicon` must be a live handle; `name` a valid string.
size_t graphcap_lexicon_index_of(const struct GcLexicon *lexicon, const char *name);

// Parses every well-formed triplet span out of a completion answer.
//
// # Safety
// String arguments must be valid NUL-terminated strings; `out` must be a
// valid pointer.
enum GcStatus graphcap_parse_triplets(const char *response,
                                      const char *image_id,
                                      const char *caption_id,
                                      struct GcTriplets **out);

// # Safety
// `triplets` must come from [`graphcap_parse_triplets`], or be null.
void graphcap_triplets_free(struct GcTriplets *triplets);

// # Safety
// `triplets` must be a live handle or null.
size_t graphcap_triplets_len(const struct GcTriplets *triplets);

// Count of spans skipped for wrong arity or empty components.
//
// # Safety
// `triplets` must be a live handle or null.
size_t graphcap_triplets_malformed(const struct GcTriplets *triplets);

// # Safety
// `triplets` must be a live handle or null.
char *graphcap_triplets_subject(const struct GcTriplets *triplets, size_t index);

// # Safety
// `triplets` must be a live handle or null.
char *graphcap_triplets_predicate(const struct GcTriplets *triplets, size_t index);

// # Safety
// `triplets` must be a live handle or null.
char *graphcap_triplets_object(const struct GcTriplets *triplets, size_t index);

// Resolves an alignment answer against a lexicon and writes the result to
// `out_index`: a 1-based class index, 0 for the `0.None` abstention, or
// -1 when the answer is unparseable.
//
// # Safety
// `response` must be a valid string, `lexicon` a live handle, and
// `out_index` a valid pointer.
enum GcStatus graphcap_parse_alignment(const char *response,
                                       const struct GcLexicon *lexicon,
                                       int64_t *out_index);

// The stock prompt templates.
struct GcTemplates *graphcap_templates_bundled(void);

// # Safety
// `templates` must come from [`graphcap_templates_bundled`], or be null.
void graphcap_templates_free(struct GcTemplates *templates);

// Renders an extraction prompt around a caption. Null on failure; see
// [`graphcap_last_error`].
//
// # Safety
// `templates` must be a live handle; `caption` a valid string.
char *graphcap_render_extraction(const struct GcTemplates *templates,
                                 enum GcChain chain,
                                 const char *caption);

// Renders an alignment prompt for a lexeme; the entity or predicate
// template is picked by the lexicon's kind. Null on failure.
//
// # Safety
// `templates` and `lexicon` must be live handles; `lexeme` a valid string.
char *graphcap_render_alignment(const struct GcTemplates *templates,
                                const char *lexeme,
                                const struct GcLexicon *lexicon);

// cost = input/1000 * input_price + output/1000 * output_price.
double graphcap_estimate_cost(uint64_t input_tokens,
                              uint64_t output_tokens,
                              double input_price_per_1k,
                              double output_price_per_1k);

// Triplets per image; 0 when there are no images.
double graphcap_density(uint64_t triplets, uint64_t images);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GRAPHCAP_H */
