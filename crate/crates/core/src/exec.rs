use alloc::vec::Vec;

/// Runs independent block tasks. Implementations may run tasks on any number
/// of workers but must return results in task order; kernels rely on that to
/// reduce partial results in a fixed order.
pub trait Executor: Sync {
    /// Upper bound on concurrently running tasks (used for scratch accounting).
    fn workers(&self) -> usize;

    fn map<T, F>(&self, n_tasks: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

/// Runs every task on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn workers(&self) -> usize {
        1
    }

    fn map<T, F>(&self, n_tasks: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n_tasks).map(f).collect()
    }
}

/// Execution environment handed to the fused kernels.
pub struct Env<'a, X: Executor> {
    pub exec: &'a X,
    pub acct: &'a mut crate::accountant::Accountant,
}

impl<'a, X: Executor> Env<'a, X> {
    pub fn new(exec: &'a X, acct: &'a mut crate::accountant::Accountant) -> Self {
        Self { exec, acct }
    }
}
