from AnchorSplat.scene import *
from AnchorSplat.atlas_loader import *
from AnchorSplat.attribute_baker import *
from AnchorSplat.camera import *
from AnchorSplat.rasterizer import *

# interactive inspection of the run left behind by `python test.py 2`
# python -i repl.py

scene = Scene.load('./scratch/pipeline_test/run/final')
cameras = load_cameras('./scratch/pipeline_test/data/cameras.json')
atlas = AttributeAtlas.load('./scratch/pipeline_test/run/atlas')

output = render(scene.splat_set, scene.mesh, scene.transform, cameras[0])
