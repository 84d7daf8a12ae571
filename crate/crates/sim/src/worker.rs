//! Online planner on its own thread. Requests carry the measured state and
//! reference window; responses carry an immutable plan snapshot.

use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Instant;

use oam_core::error::PlanError;
use oam_core::nlp::WarmStart;
use oam_core::planner_nmpc::{solve_nmpc, CollisionScene, EeReference, NmpcParams, TrajectoryPlan};
use oam_core::robot_model::WholeBodyConfig;

use crate::error::HarnessError;

pub struct PlanRequest {
    pub stamp: f64,
    pub state: WholeBodyConfig,
    pub references: Vec<EeReference>,
    pub warm: Option<WarmStart>,
    pub params: NmpcParams,
}

pub struct PlanResponse {
    pub stamp: f64,
    pub result: Result<Arc<TrajectoryPlan>, PlanError>,
    pub wall_ms: f64,
}

pub struct PlannerWorker {
    requests: Option<Sender<PlanRequest>>,
    responses: Receiver<PlanResponse>,
    handle: Option<JoinHandle<()>>,
    pending: usize,
}

impl PlannerWorker {
    pub fn spawn(scene: CollisionScene) -> Self {
        let (req_tx, req_rx) = channel::<PlanRequest>();
        let (resp_tx, resp_rx) = channel();
        let handle = std::thread::Builder::new()
            .name("nmpc".into())
            .spawn(move || {
                for req in req_rx {
                    let t0 = Instant::now();
                    let result = solve_nmpc(&req.state, &req.references, &scene, &req.params, req.warm.as_ref(), req.stamp).map(Arc::new);
                    let wall_ms = t0.elapsed().as_secs_f64() * 1e3;
                    if resp_tx.send(PlanResponse { stamp: req.stamp, result, wall_ms }).is_err() {
                        break;
                    }
                }
            })
            .expect("spawn planner thread");
        Self { requests: Some(req_tx), responses: resp_rx, handle: Some(handle), pending: 0 }
    }

    pub fn submit(&mut self, req: PlanRequest) -> Result<(), HarnessError> {
        self.requests.as_ref().ok_or(HarnessError::WorkerLost)?.send(req).map_err(|_| HarnessError::WorkerLost)?;
        self.pending += 1;
        Ok(())
    }

    pub fn pending(&self) -> usize {
        self.pending
    }

    /// Blocks until the oldest outstanding request is answered.
    pub fn collect(&mut self) -> Result<PlanResponse, HarnessError> {
        let r = self.responses.recv().map_err(|_| HarnessError::WorkerLost)?;
        self.pending -= 1;
        Ok(r)
    }
}

impl Drop for PlannerWorker {
    fn drop(&mut self) {
        self.requests.take();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}
