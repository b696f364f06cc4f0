#ifndef TLBENCH_H
#define TLBENCH_H

/* C interface to the benchmark core. Every call returns a tlb_status; on
 * failure tlb_last_error() describes what went wrong on the calling thread.
 * Strings returned through char** out-parameters are owned by the caller and
 * must be released with tlb_free. */

#ifdef __cplusplus
extern "C" {
#endif

#if defined(TLB_BUILDING_LIBRARY)
#define TLB_API __attribute__((visibility("default")))
#else
#define TLB_API
#endif

/* Values double as the command-line exit codes. */
typedef enum tlb_status {
  TLB_OK = 0,
  TLB_ERR_DATA = 2,     /* dataset ingestion or splitting */
  TLB_ERR_TRAIN = 3,    /* a training pipeline failed */
  TLB_ERR_REPORT = 4,   /* nothing to report, or the store is unusable */
  TLB_ERR_AUDIT = 5,    /* parameter audit outside tolerance */
  TLB_ERR_USAGE = 64,   /* bad argument or configuration */
  TLB_ERR_INTERNAL = 70
} tlb_status;

typedef struct tlb_session tlb_session;

TLB_API const char* tlb_version(void);

/* Message and error kind ("MissingClassDir", ...) of the last failing call on
 * this thread. Empty strings when the last call succeeded. */
TLB_API const char* tlb_last_error(void);
TLB_API const char* tlb_last_error_kind(void);

TLB_API void tlb_free(char* text);

/* A session holds one resolved configuration (a JSON object using the
 * documented config keys; NULL or "" means all defaults) and the data it
 * loads. */
TLB_API tlb_status tlb_session_open(const char* config_json, tlb_session** out);
TLB_API void tlb_session_close(tlb_session* session);

/* Resolved configuration as JSON, and its hash for a model token. */
TLB_API tlb_status tlb_session_config(const tlb_session* session, char** out_json);
TLB_API tlb_status tlb_config_hash(const tlb_session* session, const char* model_token,
                                   char** out_hex);

/* Loads the configured data (directory tree or synthetic set) and returns a
 * summary: total, class counts, unreadable files, content hash. */
TLB_API tlb_status tlb_ingest(tlb_session* session, char** out_json);

/* Runs one model pipeline ("vgg16", ..., "xgb-vgg16", "stacked"), appends its
 * RunRecord to <out_dir>/records.jsonl and returns the record as JSON. A
 * failed run still appends and returns its record, with TLB_ERR_TRAIN. */
TLB_API tlb_status tlb_run(tlb_session* session, const char* model_token, char** out_record_json);

/* Model tokens in table order, as a JSON array. */
TLB_API tlb_status tlb_model_tokens(char** out_json);

/* The printed table row for a record returned by tlb_run. */
TLB_API tlb_status tlb_render_row(const char* record_json, char** out_text);

/* Renders the table for one run key from <out_dir>/records.jsonl. format is
 * "markdown", "csv" or "json". With latest != 0 only the newest record per
 * model is used; otherwise repeated models are an error. TLB_ERR_REPORT when
 * no record matches. */
TLB_API tlb_status tlb_report_table(const char* out_dir, int device_index, int accelerator_enabled,
                                    const char* format, int latest, char** out_text);

/* "Without GPU support for Device1 (D_1')". */
TLB_API tlb_status tlb_report_caption(int device_index, int accelerator_enabled, char** out_text);

/* Accelerated vs. unaccelerated comparison over the newest record per model
 * and run key. When nothing pairs up the unpaired listing is still written to
 * out_text and the call returns TLB_ERR_REPORT. */
TLB_API tlb_status tlb_report_compare(const char* out_dir, char** out_text);

/* Trainable-parameter audit of the six backbones with random weights. JSON
 * rows carry computed, expected, delta and the tolerance applied;
 * TLB_ERR_AUDIT when any row is outside its tolerance (out_json still set). */
TLB_API tlb_status tlb_params_audit(char** out_json);

/* Duration helpers from the timing module. */
TLB_API tlb_status tlb_format_duration(double seconds, char** out_text);
TLB_API tlb_status tlb_parse_duration(const char* text, double* out_seconds);

#ifdef __cplusplus
}
#endif

#endif
