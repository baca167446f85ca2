_doc_run_command = """
    Run one ``driveval`` command.

    Parameters
    ----------
    argv: list(str) or None
        Command line arguments without the program name. ``sys.argv[1:]`` is used if ``None``.

    Returns
    -------
    int
        Exit code: 0 on success, 1 if the command failed with a domain error (the message
        is printed to standard error) and 2 on usage errors.

    Examples
    --------

    .. code-block:: python

        run_command(["town", "--town", "A", "--out", "town_a.json"])
        run_command(["eval-online", "--policy", "expert", "--town", "A", "--trials", "25", "--seed", "1"])
        run_command(["correlate", "--in", "study.jsonl", "--filter-best", "mse:0.5"])
"""

_doc_cli_description = """
Desk-scale study of how offline steering metrics relate to closed-loop driving quality.
Artifacts are written to the directory given by --out, the DRIVEVAL_OUT environment
variable or ./driveval-out.
"""

_doc_cmd_town = "Export the lane graph of a built-in town as JSON."

_doc_cmd_collect = """
Record expert driving on random routes of a town. The dataset is written as CSV with a
JSON manifest next to it.
"""

_doc_cmd_train = "Train a branched linear steering policy on a recorded dataset."

_doc_cmd_eval_offline = "Evaluate a policy on a recorded validation set with the six offline metrics."

_doc_cmd_eval_online = "Run a policy on the benchmark suite of a town and report the online metrics."

_doc_cmd_study = "Train and evaluate the full model family offline and online."

_doc_cmd_correlate = "Correlate offline and online metrics of a study."

_doc_cmd_report = "Write scatter plots, correlation reports and the model selection table of a study."

_doc_run_study = """
    Train and evaluate every model of the study family offline and online.

    Training data are two three-camera collections in the training town (with and without
    action noise); smaller amounts are their prefixes and single-camera sets are their
    central views. Every model is evaluated on the validation sets and the benchmark suite
    of every study town. Models are evaluated in parallel by ``jobs`` worker processes;
    the records are always returned and written in family order.

    Parameters
    ----------
    config: StudyConfig
        Study configuration.
    out_dir: str or Path
        Directory for ``study.jsonl`` (one ``StudyRecord`` per line) and ``study.manifest.json``
        (configuration, configuration hash and package version).
    jobs: int
        Number of worker processes. Models are evaluated in the calling process if ``jobs <= 1``.

    Returns
    -------
    list(StudyRecord)

    Raises
    ------
    ArtifactIoError
        The results can not be written.
"""
