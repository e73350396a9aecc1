from .decode import DEFAULT_ANCHORS, LOGO_THRESHOLD, NMS_IOU, Detection, GridSpec, decode_predictions, nms
from .detector import (
    LogoConfig,
    LogoDetector,
    LogoTrainLog,
    build_targets,
    detection_loss,
    freeze_schedule,
    head_surgery,
    train_logo,
)
from .evaluation import (
    AucDelta,
    AucReport,
    GroundTruth,
    PRCurve,
    ScoredMatches,
    auc,
    auc_delta,
    auc_report,
    evaluate_images,
    match_detections,
    pr_curve,
    write_auc_csv,
    write_pr_csv,
)
from .geometry import BoundingBox, iou
