"""Point-supervised video salient object detection."""
