from slflab.data._get import get_layout, DataNotFound, _AVAILABLE_DATA
import json

if __name__ == "__main__":

    print(json.dumps(get_layout('madrid'), indent=3))
