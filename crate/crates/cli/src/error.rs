use hfc_core::CoreError;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad arguments, configuration or input data.
    #[error("{0}")]
    User(String),

    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    /// 1 for problems the user can fix, 2 for internal failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::User(_) => 1,
            CliError::Core(e) => match e {
                CoreError::Tensor(_) | CoreError::NonFinite(_) => 2,
                _ => 1,
            },
        }
    }
}
