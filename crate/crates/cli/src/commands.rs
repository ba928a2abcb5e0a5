use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use mathlink_core::corpus::{load_fc_memory, load_formula_catalog, CorpusError, FcMemory, RawDocument};
use mathlink_core::evaluation::EvaluationReport;
use mathlink_core::linker::{
    insert_qid_links, render_export, seeding_list, seeding_tsv, ExportError, ExportFormat, LinkError, LinkOptions,
};
use mathlink_core::math::TokenKind;
use mathlink_core::recommend::{presentation_order, recommend_for_target, RecommenderConfig};
use mathlink_core::session::{load_session, ParseTargetError, SessionError, SessionState, Target};
use mathlink_core::Qid;
use mathlink_service::state::load_reference;
use mathlink_service::{AppState, CatalogPaths, ConfigError, LoadError, Resources, ServiceConfig};
use thiserror::Error;

use crate::{Command, RecommenderArgs, ReportFormat, TableFormat};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{path}: {source}")]
    Session {
        path: PathBuf,
        #[source]
        source: SessionError,
    },
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error(transparent)]
    Export(#[from] ExportError),
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Target(#[from] ParseTargetError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("article no longer matches the session at formula {segment_id}")]
    ArticleMismatch { segment_id: usize },
    #[error("no recommendations for {0}")]
    UnknownTarget(Target),
    #[error("{0}")]
    Invalid(String),
}

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_output(out: Option<&Path>, text: &str, stdout: &mut dyn Write) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).map_err(io_err(path)),
        None => stdout.write_all(text.as_bytes()).map_err(io_err(Path::new("<stdout>"))),
    }
}

fn session_at(path: &Path) -> Result<SessionState> {
    load_session(path).map_err(|source| CliError::Session {
        path: path.to_path_buf(),
        source,
    })
}

/// Every `*.json` session in a directory, in file-name order.
fn sessions_in(dir: &Path) -> Result<Vec<SessionState>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| session_at(p)).collect()
}

fn recommender_config(base: RecommenderConfig, args: &RecommenderArgs) -> Result<RecommenderConfig> {
    let mut config = base;
    if let Some(t) = args.fuzzy_threshold {
        if !(0.0..=1.0).contains(&t) {
            return Err(CliError::Invalid(format!("--fuzzy-threshold {t} is outside [0, 1]")));
        }
        config.fuzzy_threshold = t;
    }
    if let Some(c) = args.cutoff {
        if !(1..=10).contains(&c) {
            return Err(CliError::Invalid(format!("--cutoff {c} is outside 1..=10")));
        }
        config.cutoff = c;
    }
    Ok(config)
}

pub fn run(command: Command, stdout: &mut dyn Write) -> Result<()> {
    match command {
        Command::Serve {
            config,
            bind,
            session_dir,
            catalog_dir,
            article_dir,
            recommender,
        } => {
            let mut cfg = ServiceConfig::load(config.as_deref())?;
            if let Some(b) = bind {
                cfg.bind = b;
            }
            if let Some(d) = session_dir {
                cfg.session_dir = Some(d);
            }
            if let Some(d) = catalog_dir {
                cfg.catalogs = CatalogPaths::from_dir(&d);
            }
            if let Some(d) = article_dir {
                cfg.article_dir = Some(d);
            }
            if let Some(seed) = recommender.eval_seed {
                cfg.eval_seed = seed;
            }
            cfg.recommender = recommender_config(cfg.recommender, &recommender)?;
            let app = AppState::from_config(cfg)?;
            let runtime = tokio::runtime::Runtime::new().map_err(io_err(Path::new("<runtime>")))?;
            runtime
                .block_on(mathlink_service::serve(app))
                .map_err(io_err(Path::new("<listener>")))
        }
        Command::Parse { article, json } => parse(&article, json, stdout),
        Command::Recommend {
            article,
            target,
            catalog_dir,
            eval,
            json,
            recommender,
        } => {
            let target: Target = target.parse()?;
            let config = recommender_config(RecommenderConfig::default(), &recommender)?;
            let resources = match catalog_dir {
                Some(d) => Resources::load(&CatalogPaths::from_dir(&d), None)?,
                None => Resources::default(),
            };
            let session = SessionState::new(RawDocument::from_file(&article)?);
            let set = recommend_for_target(&target, &session, &resources.catalogs, &resources.stores, &config)
                .ok_or_else(|| CliError::UnknownTarget(target.clone()))?;
            let set = presentation_order(set, recommender.eval_seed.unwrap_or(0), eval);
            if json {
                let text = serde_json::to_string_pretty(&set).expect("set serializes");
                return write_output(None, &(text + "\n"), stdout);
            }
            let mut text = format!("{target}\n");
            for p in &set.presentation {
                text += &format!("{}\n", p.label);
                for c in &set.per_source[&p.source] {
                    let qid = c.qid.as_ref().map(|q| format!(" ({q})")).unwrap_or_default();
                    text += &format!("  {:>2}. {}{}\n", c.rank, c.name, qid);
                }
            }
            write_output(None, &text, stdout)
        }
        Command::Link {
            article,
            session,
            out,
            dry_run,
            quote_attrs,
            block_only,
        } => {
            let annotated = session_at(&session)?;
            let current = SessionState::new(RawDocument::from_file(&article)?);
            let links = carry_links(&annotated, &current)?;
            let (text, stats) = insert_qid_links(
                current.doc(),
                current.segments(),
                current.formulas(),
                &links,
                LinkOptions {
                    quote_attrs,
                    block_only,
                },
            )?;
            let summary = format!(
                "candidates {}, linked {}, skipped duplicates {}, skipped non-equations {}, skipped inline {}\n",
                stats.candidates, stats.linked, stats.skipped_duplicates, stats.skipped_non_equation, stats.skipped_inline
            );
            if dry_run {
                return write_output(None, &summary, stdout);
            }
            match out {
                Some(path) => {
                    fs::write(&path, text).map_err(io_err(&path))?;
                    write_output(None, &summary, stdout)
                }
                None => {
                    eprint!("{summary}");
                    write_output(None, &text, stdout)
                }
            }
        }
        Command::Seed {
            sessions,
            catalog,
            fc_memory,
            out,
        } => {
            let sessions = sessions_in(&sessions)?;
            let catalog = load_formula_catalog(&catalog)?;
            let memory = match fc_memory {
                Some(p) => load_fc_memory(&p)?,
                None => FcMemory::new(),
            };
            let tsv = seeding_tsv(&seeding_list(&sessions, &catalog, &memory));
            write_output(out.as_deref(), &tsv, stdout)
        }
        Command::Report {
            sessions,
            format,
            reference,
        } => {
            let sessions = sessions_in(&sessions)?;
            let reference = match reference {
                Some(p) => load_reference(&p)?,
                None => Vec::new(),
            };
            let report = EvaluationReport::from_sessions(&sessions, &reference);
            let text = match format {
                ReportFormat::Json => report.to_json() + "\n",
                ReportFormat::Table => report.render_table(),
            };
            write_output(None, &text, stdout)
        }
        Command::Export { session, format, out } => {
            let state = session_at(&session)?;
            let format = match format {
                TableFormat::Csv => ExportFormat::Csv,
                TableFormat::Json => ExportFormat::Json,
            };
            write_output(out.as_deref(), &render_export(&state, format)?, stdout)
        }
    }
}

/// Formula QIDs of a session, re-addressed to an article that may have
/// been edited since; each annotated formula must still be in place.
fn carry_links(annotated: &SessionState, current: &SessionState) -> Result<BTreeMap<usize, Qid>> {
    let links = annotated.formula_qids();
    for &segment_id in links.keys() {
        let before = annotated.segment(segment_id).map(|s| &s.raw_latex);
        let now = current.segment(segment_id).map(|s| &s.raw_latex);
        if before != now {
            return Err(CliError::ArticleMismatch { segment_id });
        }
    }
    Ok(links)
}

fn parse(article: &Path, json: bool, stdout: &mut dyn Write) -> Result<()> {
    let session = SessionState::new(RawDocument::from_file(article)?);
    if json {
        let value = serde_json::json!({
            "title": session.doc().title,
            "segments": session.segments(),
            "formulas": session.formulas(),
            "issues": session.issues(),
        });
        let text = serde_json::to_string_pretty(&value).expect("value serializes");
        return write_output(None, &(text + "\n"), stdout);
    }
    let mut text = format!("{}: {} formulae\n", session.doc().title, session.segments().len());
    for (seg, f) in session.segments().iter().zip(session.formulas()) {
        let ids: Vec<&str> = f
            .tokens
            .iter()
            .filter(|t| t.kind == TokenKind::Identifier)
            .filter_map(|t| t.symbol.as_deref())
            .collect();
        text += &format!(
            "{:>3} {:<6} {:<3} {}\n      identifiers: {}\n",
            seg.segment_id,
            format!("{:?}", seg.display).to_lowercase(),
            if f.is_equation { "eq" } else { "" },
            seg.raw_latex,
            ids.join(" ")
        );
    }
    for issue in session.issues() {
        text += &format!("issue: {issue:?}\n");
    }
    write_output(None, &text, stdout)
}
