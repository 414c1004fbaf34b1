use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad command line or configuration (missing paths, invalid settings).
    #[error("usage error: {0}")]
    Usage(String),

    #[error("schema parse error at line {line}, column {column}: {message}")]
    SchemaParse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("schema validation error in table `{table}`: {message}")]
    SchemaValidation { table: String, message: String },

    #[error("data error in table `{table}`{}: {message}", row.map(|r| format!(" at row {r}")).unwrap_or_default())]
    Data {
        table: String,
        row: Option<usize>,
        message: String,
    },

    #[error("graph error: {0}")]
    Graph(String),

    #[error("codec error in column `{column}`: {message}")]
    Codec { column: String, message: String },

    #[error("model error: {0}")]
    Model(String),

    /// Non-finite values during training or sampling.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error on `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn data(table: &str, row: Option<usize>, message: impl Into<String>) -> Self {
        Error::Data {
            table: table.to_string(),
            row,
            message: message.into(),
        }
    }

    pub(crate) fn validation(table: &str, message: impl Into<String>) -> Self {
        Error::SchemaValidation {
            table: table.to_string(),
            message: message.into(),
        }
    }

    /// Process exit code: 1 usage, 2 data, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Numeric(_) => 3,
            _ => 2,
        }
    }
}
