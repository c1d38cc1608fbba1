#ifndef ISLANDS_H
#define ISLANDS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum IslandsStatus {
  ISLANDS_STATUS_OK = 0,
  ISLANDS_STATUS_NULL_ARGUMENT = 1,
  ISLANDS_STATUS_INVALID_UTF8 = 2,
  ISLANDS_STATUS_CONFIG = 3,
  ISLANDS_STATUS_PLAN = 4,
  ISLANDS_STATUS_CONFLICT = 5,
  ISLANDS_STATUS_TXN_NOT_ACTIVE = 6,
  ISLANDS_STATUS_TYPE_MISMATCH = 7,
  ISLANDS_STATUS_NOT_FOUND = 8,
  ISLANDS_STATUS_INVARIANT = 9,
  ISLANDS_STATUS_ENGINE = 10,
  ISLANDS_STATUS_PANIC = 11,
} IslandsStatus;

/*
 Opaque run configuration.
 */
typedef struct IslandsConfig IslandsConfig;

/*
 Opaque row store plus transaction engine, loaded with a config's initial
 table.
 */
typedef struct IslandsDb IslandsDb;

/*
 Opaque transaction. Keeps its database alive.
 */
typedef struct IslandsTxn IslandsTxn;

/*
 Headline numbers of one run. The full report is available as CSV from
 [`islands_run_csv`].
 */
typedef struct IslandsMetrics {
  double duration_s;
  uint64_t txn_commits;
  uint64_t txn_aborts;
  double txn_throughput;
  uint64_t queries_completed;
  double analytical_throughput;
  double lag_mean_ts;
  uint64_t lag_max_ts;
  double analytics_offchip_bytes;
  double energy_total_pj;
} IslandsMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failure on this thread, or null. Owned by the library;
 valid until the next failing call on this thread.
 */
const char *islands_last_error(void);

/*
 # Safety
 `s` must be null or a string returned by this library, not yet freed.
 */
void islands_string_free(char *s);

/*
 Default configuration.

 # Safety
 `out` must be valid for writes.
 */
enum IslandsStatus islands_config_default(struct IslandsConfig **out);

/*
 Parses config file text.

 # Safety
 `text` must be a NUL-terminated string; `out` must be valid for writes.
 */
enum IslandsStatus islands_config_parse(const char *text, struct IslandsConfig **out);

/*
 Sets one key (`section.key` or an unambiguous bare key). The config is
 left unchanged on failure.

 # Safety
 `cfg` must be a live config handle; `key` and `value` NUL-terminated.
 */
enum IslandsStatus islands_config_set(struct IslandsConfig *cfg,
                                      const char *key,
                                      const char *value);

/*
 Config as file text.

 # Safety
 `cfg` must be a live config handle; `out` valid for writes.
 */
enum IslandsStatus islands_config_to_text(const struct IslandsConfig *cfg, char **out);

/*
 # Safety
 `cfg` must be null or a config handle not yet freed.
 */
void islands_config_free(struct IslandsConfig *cfg);

/*
 Runs the configured workload and fills `out`.

 # Safety
 `cfg` must be a live config handle; `out` valid for writes.
 */
enum IslandsStatus islands_run(const struct IslandsConfig *cfg, struct IslandsMetrics *out);

/*
 Runs the configured workload; `out` receives `metrics.csv` contents.

 # Safety
 `cfg` must be a live config handle; `out` valid for writes.
 */
enum IslandsStatus islands_run_csv(const struct IslandsConfig *cfg, char **out);

/*
 Opens a database holding the config's initial table.

 # Safety
 `cfg` must be a live config handle; `out` valid for writes.
 */
enum IslandsStatus islands_db_open(const struct IslandsConfig *cfg, struct IslandsDb **out);

/*
 # Safety
 `db` must be null or a database handle not yet freed. Open transactions
 stay usable.
 */
void islands_db_free(struct IslandsDb *db);

/*
 Newest commit timestamp.

 # Safety
 `db` must be a live database handle; `out` valid for writes.
 */
enum IslandsStatus islands_db_latest_ts(const struct IslandsDb *db, uint64_t *out);

/*
 Evaluates a textual plan against the latest committed state; `out`
 receives CSV with a header row.

 # Safety
 `db` must be a live database handle; `plan` NUL-terminated; `out` valid
 for writes.
 */
enum IslandsStatus islands_db_query(const struct IslandsDb *db, const char *plan, char **out);

/*
 Starts a snapshot-isolated transaction.

 # Safety
 `db` must be a live database handle; `out` valid for writes.
 */
enum IslandsStatus islands_txn_begin(const struct IslandsDb *db, struct IslandsTxn **out);

/*
 # Safety
 `txn` must be a live transaction; `column` NUL-terminated; `out` valid
 for writes.
 */
enum IslandsStatus islands_txn_get_int(struct IslandsTxn *txn,
                                       int64_t key,
                                       const char *column,
                                       int64_t *out);

/*
 # Safety
 As [`islands_txn_get_int`].
 */
enum IslandsStatus islands_txn_get_float(struct IslandsTxn *txn,
                                         int64_t key,
                                         const char *column,
                                         double *out);

/*
 Buffers a write of one int column. An absent key is inserted with zeroed
 values.

 # Safety
 `txn` must be a live transaction; `column` NUL-terminated.
 */
enum IslandsStatus islands_txn_put_int(struct IslandsTxn *txn,
                                       int64_t key,
                                       const char *column,
                                       int64_t value);

/*
 # Safety
 As [`islands_txn_put_int`].
 */
enum IslandsStatus islands_txn_put_float(struct IslandsTxn *txn,
                                         int64_t key,
                                         const char *column,
                                         double value);

/*
 # Safety
 `txn` must be a live transaction.
 */
enum IslandsStatus islands_txn_delete(struct IslandsTxn *txn, int64_t key);

/*
 Commits. `commit_ts` receives the commit timestamp, or 0 for a read-only
 transaction. On [`IslandsStatus::Conflict`] the transaction is aborted.
 The handle must still be freed.

 # Safety
 `txn` must be a live transaction; `commit_ts` null or valid for writes.
 */
enum IslandsStatus islands_txn_commit(struct IslandsTxn *txn, uint64_t *commit_ts);

/*
 # Safety
 `txn` must be a live transaction.
 */
enum IslandsStatus islands_txn_abort(struct IslandsTxn *txn);

/*
 Releases a transaction; an active one is aborted first.

 # Safety
 `txn` must be null or a transaction handle not yet freed.
 */
void islands_txn_free(struct IslandsTxn *txn);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ISLANDS_H */
